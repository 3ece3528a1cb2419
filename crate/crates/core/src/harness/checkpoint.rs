//! JSON checkpoints: run config, seeds, epoch, vocabulary, and named
//! parameters, guarded by a SHA-256 checksum over the parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Vocab};
use crate::nn::NamedTensor;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: RunConfig,
    pub data_seed: u64,
    pub init_seed: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub point_fields: usize,
    pub vocab: Vocab,
    pub checksum: String,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(model: &Model, config: &RunConfig, epoch: usize) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: config.clone(),
            data_seed: config.data_seed(),
            init_seed: config.init_seed(),
            epoch,
            point_fields: model.point_fields,
            vocab: model.vocab.clone(),
            checksum: model.store.checksum(),
            params: model.store.entries().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        serde_json::to_writer(f, self)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let f = std::fs::File::open(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format {} (expected {CHECKPOINT_FORMAT})",
                ck.format
            )));
        }
        Ok(ck)
    }

    /// Rebuild the model and verify the parameter checksum.
    pub fn into_model(self) -> Result<Model> {
        let incompatible = Error::IncompatibleCheckpoint;
        for p in &self.params {
            if p.tensor.shape().iter().product::<usize>() != p.tensor.data().len() {
                return Err(incompatible(format!("parameter {} has inconsistent shape", p.name)));
            }
        }
        let mut model = Model::new(self.config.model.clone(), self.vocab, self.point_fields, self.init_seed)
            .map_err(|e| incompatible(e.to_string()))?;
        model.store.load_named(&self.params).map_err(incompatible)?;
        let sum = model.store.checksum();
        if sum != self.checksum {
            return Err(incompatible(format!(
                "parameter checksum {sum} does not match recorded {}",
                self.checksum
            )));
        }
        Ok(model)
    }

    /// Fail unless the checkpoint's model section equals `expected`.
    pub fn check_model_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config.model != expected {
            let a = toml::to_string(&self.config.model).unwrap_or_default();
            let b = toml::to_string(expected).unwrap_or_default();
            let diff: Vec<String> = a
                .lines()
                .zip(b.lines())
                .filter(|(x, y)| x != y)
                .map(|(x, y)| format!("checkpoint `{x}` vs config `{y}`"))
                .collect();
            return Err(Error::IncompatibleCheckpoint(format!(
                "model config differs: {}",
                if diff.is_empty() { "section layout".to_string() } else { diff.join("; ") }
            )));
        }
        Ok(())
    }
}

/// Load a checkpoint and its model in one step.
pub fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let meta = Checkpoint {
        params: Vec::new(),
        ..ck.clone()
    };
    Ok((ck.into_model()?, meta))
}
