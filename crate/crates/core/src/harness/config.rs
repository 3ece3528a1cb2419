//! Run configuration: TOML file with `model`, `optimizer`, `data`, and
//! `eval` sections plus top-level seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::nn::optim::AdamWConfig;
use crate::scene::Sensor;
use crate::synth::{SynthConfig, TemplateKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Write a checkpoint every this many epochs (the last epoch is always
    /// written); 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        OptimizerConfig {
            lr: a.lr,
            schedule: Schedule::Cosine,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            epochs: 40,
            batch_size: 4,
            grad_clip: 10.0,
            checkpoint_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate after `progress` in [0, 1] of all optimizer steps.
    pub fn lr_at(&self, progress: f64) -> f64 {
        match self.schedule {
            Schedule::Cosine => crate::nn::optim::cosine_lr(self.lr, progress),
            Schedule::Constant => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directories. When `train_root` is unset, data is generated
    /// from `synth` instead.
    pub train_root: Option<PathBuf>,
    pub val_root: Option<PathBuf>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub sensor: Sensor,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_root: None,
            val_root: None,
            train_scenes: 2000,
            val_scenes: 200,
            sensor: Sensor::Radar1,
            synth: distractor_synth(),
        }
    }
}

/// The text-disambiguation set: every scene holds a same-class pair that
/// only velocity or lateral position tells apart.
pub fn distractor_synth() -> SynthConfig {
    SynthConfig {
        objects_per_scene: (2, 5),
        distractor: true,
        road_aligned: true,
        template_set: vec![
            TemplateKind::Toward,
            TemplateKind::Away,
            TemplateKind::Left,
            TemplateKind::Right,
        ],
        ..SynthConfig::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Default for both seeds below.
    pub seed: u64,
    /// Governs dataset generation only.
    pub data_seed: Option<u64>,
    /// Governs parameter init and batch order.
    pub init_seed: Option<u64>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> RunConfig {
        let mut cfg = RunConfig {
            seed: 0,
            data_seed: None,
            init_seed: None,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        };
        if p == Profile::Paper {
            cfg.model.channels = 64;
            cfg.model.text_dim = 64;
            cfg.model.grid.out_channels = 64;
            cfg.optimizer.epochs = 80;
        }
        cfg
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    /// Point the data section at `sensor`, adjusting the per-pillar point
    /// budget (10 for radar, 32 for LiDAR).
    pub fn set_sensor(&mut self, sensor: Sensor) {
        self.data.sensor = sensor;
        self.data.synth.sensor = sensor;
        self.model.grid.max_points_per_pillar = if sensor.is_lidar() { 32 } else { 10 };
    }

    /// Synth config for the training (`val = false`) or validation split.
    pub fn synth_split(&self, val: bool) -> SynthConfig {
        SynthConfig {
            n_scenes: if val { self.data.val_scenes } else { self.data.train_scenes },
            seed: self.data_seed(),
            sensor: self.data.sensor,
            ..self.data.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        let bad = |m: String| Err(Error::Config(m));
        if !(o.lr > 0.0) || !(o.weight_decay >= 0.0) || !(o.eps > 0.0) {
            return bad("optimizer lr and eps must be positive, weight_decay >= 0".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optimizer betas must lie in [0, 1)".into());
        }
        if o.epochs == 0 || o.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(o.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0".into());
        }
        if self.data.train_root.is_none() {
            if self.data.train_scenes == 0 {
                return bad("data.train_scenes must be positive".into());
            }
            self.synth_split(false).validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str, path: &Path) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| {
            let line = e
                .span()
                .map(|sp| s[..sp.start.min(s.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
        RunConfig::from_toml_str(&s, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
