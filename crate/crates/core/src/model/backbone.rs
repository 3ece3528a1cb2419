//! Three-stage strided convolutional backbone over the pseudo-image.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::ConvBlock;
use crate::nn::{ConvSpec, Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Vec<ConvBlock>>,
    pub channels: usize,
}

/// Stage outputs: `H x W x C`, `H/2 x W/2 x 2C`, `H/4 x W/4 x 4C`.
#[derive(Clone, Copy, Debug)]
pub struct MultiScale {
    pub s1: Var,
    pub s2: Var,
    pub s3: Var,
}

impl MultiScale {
    pub fn stages(&self) -> [Var; 3] {
        [self.s1, self.s2, self.s3]
    }
}

impl Backbone {
    /// `blocks[i]` convolutions in stage `i`; the first block of stages 2
    /// and 3 has stride 2 and doubles the channels.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c: usize,
        blocks: [usize; 3],
    ) -> Result<Backbone> {
        if blocks.iter().any(|&b| b == 0) {
            return Err(Error::Config(format!("every backbone stage needs a block, got {blocks:?}")));
        }
        let mut stages = Vec::new();
        let mut prev = c_in;
        for (s, &n) in blocks.iter().enumerate() {
            let out = c << s;
            let stage = (0..n)
                .map(|b| {
                    let spec = if b == 0 && s > 0 {
                        ConvSpec::strided(3, 2)
                    } else {
                        ConvSpec::same(3)
                    };
                    let cin = if b == 0 { prev } else { out };
                    ConvBlock::new(store, rng, &format!("{name}.s{}.b{b}", s + 1), cin, out, spec)
                })
                .collect();
            stages.push(stage);
            prev = out;
        }
        Ok(Backbone { stages, channels: c })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<MultiScale> {
        let s = g.shape(x);
        if s.len() != 3 || s[0] % 4 != 0 || s[1] % 4 != 0 {
            return Err(Error::invalid(format!(
                "backbone input must be [H, W, C] with H, W divisible by 4, got {s:?}"
            )));
        }
        let mut outs = Vec::with_capacity(3);
        let mut h = x;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(g, store, h);
            }
            outs.push(h);
        }
        Ok(MultiScale {
            s1: outs[0],
            s2: outs[1],
            s3: outs[2],
        })
    }
}
