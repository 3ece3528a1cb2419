//! Multi-scale aggregation necks: the deformable FPN and the baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, GroupNorm, Linear, LEAKY_SLOPE};
use crate::nn::params::fan_in_uniform;
use crate::nn::{ConvSpec, DeformSpec, Graph, ParamId, ParamStore, Tensor, Var};

/// Modulated deformable convolution. Offsets and modulation logits come
/// from zero-initialized pointwise predictors on the input, so training
/// starts from a regular convolution scaled by `sigmoid(0) = 0.5`.
#[derive(Clone, Debug)]
pub struct DeformConv {
    pub spec: DeformSpec,
    pub weight: ParamId,
    pub bias: ParamId,
    pub offset: Linear,
    pub modulation: Linear,
}

impl DeformConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        spec: DeformSpec,
    ) -> Result<DeformConv> {
        if c_in % spec.groups != 0 {
            return Err(Error::Config(format!(
                "deformable input channels {c_in} not divisible by {} groups",
                spec.groups
            )));
        }
        let fan_in = spec.taps() * c_in;
        Ok(DeformConv {
            spec,
            weight: store.add(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[fan_in, c_out], fan_in, 2f64.sqrt()),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            offset: Linear::zeros(store, &format!("{name}.offset"), c_in, spec.offset_channels(), true),
            modulation: Linear::zeros(store, &format!("{name}.modulation"), c_in, spec.mask_channels(), true),
        })
    }

    /// Predicted `(offsets, modulation)` maps for input `x [H, W, C]`.
    pub fn predict_sampling(&self, g: &mut Graph, store: &ParamStore, x: Var) -> (Var, Var) {
        let off = self.offset.forward(g, store, x);
        let m = self.modulation.forward(g, store, x);
        let m = g.sigmoid(m);
        (off, m)
    }

    /// Convolution with explicit sampling offsets and modulation.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: Var, offsets: Var, mask: Var) -> Var {
        let (h, w) = (g.shape(x)[0], g.shape(x)[1]);
        let cols = g.deform_im2col(x, offsets, mask, self.spec);
        let wt = g.param(store, self.weight);
        let y = g.matmul(cols, wt);
        let b = g.param(store, self.bias);
        let y = g.add_row(y, b);
        let c = g.value(y).cols();
        g.reshape(y, &[h, w, c])
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (off, m) = self.predict_sampling(g, store, x);
        self.forward_with(g, store, x, off, m)
    }
}

pub const DEFORM_GROUPS: usize = 4;

pub fn default_deform_spec(groups: usize) -> DeformSpec {
    DeformSpec {
        kernel: 3,
        dilation: 1,
        groups,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeckKind {
    #[default]
    Deformable,
    /// Plain convolution per stage, transposed-convolution upsampling.
    SecondFpn,
    /// Parallel dilated convolutions per stage.
    Aspp,
    /// Cross-stage partial blocks per stage.
    CspFpn,
}

impl NeckKind {
    pub const ALL: [NeckKind; 4] = [NeckKind::Deformable, NeckKind::SecondFpn, NeckKind::Aspp, NeckKind::CspFpn];

    pub fn name(self) -> &'static str {
        match self {
            NeckKind::Deformable => "deformable",
            NeckKind::SecondFpn => "second_fpn",
            NeckKind::Aspp => "aspp",
            NeckKind::CspFpn => "csp_fpn",
        }
    }
}

impl std::str::FromStr for NeckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NeckKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown neck {s:?}")))
    }
}

/// Per-stage refinement mapping the stage channels to `C`.
#[derive(Clone, Debug)]
enum Refine {
    Deform(DeformConv, GroupNorm),
    Conv(Conv2d, GroupNorm),
    Aspp(Vec<Conv2d>, GroupNorm),
    Csp {
        split: usize,
        inner: Conv2d,
        inner_norm: GroupNorm,
        transition: Conv2d,
        norm: GroupNorm,
    },
}

impl Refine {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: NeckKind,
        c_in: usize,
        c: usize,
        groups: usize,
    ) -> Result<Refine> {
        let norm = |store: &mut ParamStore, n: &str| GroupNorm::new(store, &format!("{name}.{n}"), c);
        Ok(match kind {
            NeckKind::Deformable => Refine::Deform(
                DeformConv::new(store, rng, &format!("{name}.deform"), c_in, c, default_deform_spec(groups))?,
                norm(store, "norm"),
            ),
            NeckKind::SecondFpn => Refine::Conv(
                Conv2d::new(store, rng, &format!("{name}.conv"), c_in, c, ConvSpec::same(3), true),
                norm(store, "norm"),
            ),
            NeckKind::Aspp => Refine::Aspp(
                [1, 2, 3]
                    .iter()
                    .map(|&d| Conv2d::new(store, rng, &format!("{name}.d{d}"), c_in, c, ConvSpec::dilated(3, d), true))
                    .collect(),
                norm(store, "norm"),
            ),
            NeckKind::CspFpn => {
                let split = c_in / 2;
                let inner = Conv2d::new(store, rng, &format!("{name}.inner"), c_in - split, c_in - split, ConvSpec::same(3), true);
                let inner_norm = GroupNorm::new(store, &format!("{name}.inner_norm"), c_in - split);
                Refine::Csp {
                    split,
                    inner,
                    inner_norm,
                    transition: Conv2d::new(store, rng, &format!("{name}.transition"), c_in, c, ConvSpec::same(1), true),
                    norm: norm(store, "norm"),
                }
            }
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (y, norm) = match self {
            Refine::Deform(d, n) => (d.forward(g, store, x), n),
            Refine::Conv(c, n) => (c.forward(g, store, x), n),
            Refine::Aspp(branches, n) => {
                let mut acc = branches[0].forward(g, store, x);
                for b in &branches[1..] {
                    let y = b.forward(g, store, x);
                    acc = g.add(acc, y);
                }
                (acc, n)
            }
            Refine::Csp {
                split,
                inner,
                inner_norm,
                transition,
                norm,
            } => {
                let c_in = g.value(x).cols();
                let keep = g.slice_last(x, 0, *split);
                let rest = g.slice_last(x, *split, c_in - split);
                let r = inner.forward(g, store, rest);
                let r = inner_norm.forward(g, store, r);
                let r = g.leaky_relu(r, LEAKY_SLOPE);
                let cat = g.concat_last(&[keep, r]);
                (transition.forward(g, store, cat), norm)
            }
        };
        let y = norm.forward(g, store, y);
        g.leaky_relu(y, LEAKY_SLOPE)
    }
}

/// Learned transposed convolution with kernel = stride = `s`.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
    pub factor: usize,
}

impl Upsample {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, factor: usize) -> Upsample {
        Upsample {
            weight: store.add(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[c, factor * factor * c], c, 2f64.sqrt()),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c])),
            factor,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        let y = g.depth_to_space(y, self.factor);
        let b = g.param(store, self.bias);
        g.add_row(y, b)
    }
}

/// Refines each stage to `C` channels, upsamples stages 2 and 3 to the
/// stage-1 resolution, and concatenates to `[H, W, 3C]`.
#[derive(Clone, Debug)]
pub struct Neck {
    pub kind: NeckKind,
    refine: Vec<Refine>,
    up2: Upsample,
    up3: Upsample,
    pub channels: usize,
}

impl Neck {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: NeckKind,
        c: usize,
        groups: usize,
    ) -> Result<Neck> {
        let refine = (0..3)
            .map(|s| Refine::new(store, rng, &format!("{name}.s{}", s + 1), kind, c << s, c, groups))
            .collect::<Result<Vec<_>>>()?;
        Ok(Neck {
            kind,
            refine,
            up2: Upsample::new(store, rng, &format!("{name}.up2"), c, 2),
            up3: Upsample::new(store, rng, &format!("{name}.up3"), c, 4),
            channels: c,
        })
    }

    pub fn deform(&self, stage: usize) -> Option<&DeformConv> {
        match &self.refine[stage] {
            Refine::Deform(d, _) => Some(d),
            _ => None,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: [Var; 3]) -> Result<Var> {
        let (h, w) = (g.shape(stages[0])[0], g.shape(stages[0])[1]);
        let c = self.channels;
        let expect = [[h, w, c], [h / 2, w / 2, 2 * c], [h / 4, w / 4, 4 * c]];
        for (s, e) in stages.iter().zip(&expect) {
            if g.shape(*s) != e {
                return Err(Error::invalid(format!(
                    "neck stage shape {:?}, expected {e:?}",
                    g.shape(*s)
                )));
            }
        }
        let f1 = self.refine[0].forward(g, store, stages[0]);
        let f2 = self.refine[1].forward(g, store, stages[1]);
        let f2 = self.up2.forward(g, store, f2);
        let f3 = self.refine[2].forward(g, store, stages[2]);
        let f3 = self.up3.forward(g, store, f3);
        Ok(g.concat_last(&[f1, f2, f3]))
    }
}
