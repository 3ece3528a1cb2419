//! The grounding network: pillar encoder, text encoder, backbone, fusion,
//! neck, and head, wired together over one parameter store.

pub mod backbone;
pub mod fusion;
pub mod head;
pub mod neck;
pub mod pillar;
pub mod text;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoredBox;
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::scene::PointCloud;

pub use backbone::{Backbone, MultiScale};
pub use fusion::{FusionFpn, FusionKind, GraphMetric, GraphSpec};
pub use head::{DecodeConfig, HeadNet, HeadTargets, LossVars, YawEncoding};
pub use neck::{Neck, NeckKind};
pub use pillar::{pillarize, PillarEncoder, PillarGridConfig, Pillars};
pub use text::{tokenize, TextEncoder, TextEncoderKind, TextFeatures, TokenizedPrompt, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Base channel count `C` of the backbone and neck.
    pub channels: usize,
    pub text_dim: usize,
    pub token_length: usize,
    pub text_encoder: TextEncoderKind,
    pub fusion: FusionKind,
    pub neck: NeckKind,
    pub graph: GraphSpec,
    pub deform_groups: usize,
    pub backbone_blocks: [usize; 3],
    pub head_deform: bool,
    pub yaw_encoding: YawEncoding,
    pub reg_weight: f64,
    pub grid: PillarGridConfig,
    pub decode: DecodeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            text_dim: 32,
            token_length: text::DEFAULT_TOKEN_LENGTH,
            text_encoder: TextEncoderKind::SelfAttention,
            fusion: FusionKind::Ggf,
            neck: NeckKind::Deformable,
            graph: GraphSpec::default(),
            deform_groups: neck::DEFORM_GROUPS,
            backbone_blocks: [3, 5, 5],
            head_deform: true,
            yaw_encoding: YawEncoding::SinCos,
            reg_weight: head::DEFAULT_REG_WEIGHT,
            grid: PillarGridConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.text_dim == 0 || self.token_length == 0 {
            return bad("channels, text_dim and token_length must be positive".into());
        }
        if self.grid.height() % 4 != 0 || self.grid.width() % 4 != 0 {
            return bad(format!(
                "grid {}x{} must be divisible by 4",
                self.grid.height(),
                self.grid.width()
            ));
        }
        if self.deform_groups == 0 || self.channels % self.deform_groups != 0 {
            return bad(format!(
                "channels {} not divisible by deform_groups {}",
                self.channels, self.deform_groups
            ));
        }
        if self.graph.k == 0 {
            return bad("graph.k must be at least 1".into());
        }
        let smallest = (self.grid.height() / 4) * (self.grid.width() / 4);
        if self.fusion == FusionKind::Ggf && self.graph.k >= smallest {
            return bad(format!(
                "graph.k = {} needs more than {} cells at the coarsest stage",
                self.graph.k, smallest
            ));
        }
        if !(self.reg_weight >= 0.0) {
            return bad(format!("reg_weight must be >= 0, got {}", self.reg_weight));
        }
        Ok(())
    }
}

/// Preprocessed network input for one sample.
#[derive(Clone, Debug)]
pub struct SampleInput {
    pub pillars: Pillars,
    pub tokens: TokenizedPrompt,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Vocab,
    pub point_fields: usize,
    pub pillar: PillarEncoder,
    pub text: TextEncoder,
    pub backbone: Backbone,
    pub fusion: FusionFpn,
    pub neck: Neck,
    pub head: HeadNet,
}

impl Model {
    /// Fresh parameters drawn from `init_seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, point_fields: usize, init_seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let pillar = PillarEncoder::new(&mut store, &mut rng, "pillar", point_fields, config.grid.clone());
        let text = TextEncoder::new(
            &mut store,
            &mut rng,
            "text",
            config.text_encoder,
            vocab.len(),
            config.text_dim,
            config.token_length,
        )?;
        let backbone = Backbone::new(
            &mut store,
            &mut rng,
            "backbone",
            config.grid.out_channels,
            c,
            config.backbone_blocks,
        )?;
        let fusion = FusionFpn::new(
            &mut store,
            &mut rng,
            "fusion",
            config.fusion,
            config.graph,
            [c, 2 * c, 4 * c],
            config.text_dim,
        )?;
        let neck = Neck::new(&mut store, &mut rng, "neck", config.neck, c, config.deform_groups)?;
        let head = HeadNet::new(
            &mut store,
            &mut rng,
            "head",
            3 * c,
            c,
            config.head_deform,
            config.deform_groups,
            config.yaw_encoding,
        )?;
        Ok(Model {
            config,
            store,
            vocab,
            point_fields,
            pillar,
            text,
            backbone,
            fusion,
            neck,
            head,
        })
    }

    pub fn prepare(&self, cloud: &PointCloud, prompt: &str) -> Result<SampleInput> {
        if cloud.dim() != self.point_fields {
            return Err(Error::invalid(format!(
                "point cloud has {} fields, model expects {}",
                cloud.dim(),
                self.point_fields
            )));
        }
        Ok(SampleInput {
            pillars: pillarize(cloud, &self.config.grid),
            tokens: tokenize(prompt, &self.vocab, self.config.token_length)?,
        })
    }

    /// Heatmap logits `[H, W, 3]` and regression `[H, W, R]`.
    pub fn forward(&self, g: &mut Graph, input: &SampleInput) -> Result<(Var, Var)> {
        let text = self.text.forward(g, &self.store, &input.tokens)?;
        self.forward_with_text(g, &input.pillars, text, &input.tokens.pad_mask)
    }

    /// Forward pass with externally produced text features `[L, C_t]`.
    pub fn forward_with_text(&self, g: &mut Graph, pillars: &Pillars, text: Var, pad_mask: &[bool]) -> Result<(Var, Var)> {
        let store = &self.store;
        let img = self.pillar.forward(g, store, pillars);
        let ms = self.backbone.forward(g, store, img)?;
        let tf = TextFeatures {
            matrix: text,
            pad_mask,
        };
        let fused = self.fusion.forward(g, store, ms.stages(), tf)?;
        let agg = self.neck.forward(g, store, fused)?;
        Ok(self.head.forward(g, store, agg))
    }

    pub fn loss(&self, g: &mut Graph, input: &SampleInput, targets: &HeadTargets) -> Result<LossVars> {
        let (hm, reg) = self.forward(g, input)?;
        head::compute_loss(g, hm, reg, targets, self.config.reg_weight)
    }

    pub fn targets(&self, referred: &[crate::scene::Box3D]) -> HeadTargets {
        head::assign_targets(referred, &self.config.grid, self.config.yaw_encoding)
    }

    /// Raw head outputs without gradient bookkeeping.
    pub fn infer(&self, input: &SampleInput) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::inference();
        let (hm, reg) = self.forward(&mut g, input)?;
        Ok((g.value(hm).clone(), g.value(reg).clone()))
    }

    pub fn predict(&self, input: &SampleInput) -> Result<Vec<ScoredBox>> {
        let (hm, reg) = self.infer(input)?;
        Ok(head::decode(
            &hm,
            &reg,
            &self.config.grid,
            self.config.yaw_encoding,
            &self.config.decode,
        ))
    }
}
