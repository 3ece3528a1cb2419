//! Parameterized building blocks. Each layer only holds parameter ids; the
//! values live in a [`ParamStore`].

use rand::Rng;

use super::conv::ConvSpec;
use super::graph::{Graph, Var};
use super::params::{fan_in_uniform, ParamId, ParamStore};
use super::tensor::Tensor;

pub const GN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Linear {
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[d_in, d_out], d_in, 1.0),
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Linear { w, b }
    }

    /// Zero weights and bias: the layer starts as the zero map.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Linear {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[d_in, d_out]));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Conv2d {
        let fan_in = spec.taps() * c_in;
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[fan_in, c_out], fan_in, 2f64.sqrt()),
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Conv2d { w, b, spec }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.conv2d(x, w, self.spec);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Group norm with per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

/// Largest group count <= `target` that divides `c`.
pub fn norm_groups(c: usize, target: usize) -> usize {
    (1..=target.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> GroupNorm {
        GroupNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            groups: norm_groups(c, 8),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = g.group_norm(x, self.groups, GN_EPS);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul_row(y, gamma);
        g.add_row(y, beta)
    }
}

/// Conv -> GroupNorm -> leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        spec: ConvSpec,
    ) -> ConvBlock {
        ConvBlock {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), c_in, c_out, spec, false),
            norm: GroupNorm::new(store, &format!("{name}.norm"), c_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.norm.forward(g, store, y);
        g.leaky_relu(y, LEAKY_SLOPE)
    }
}
