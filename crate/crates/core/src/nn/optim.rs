use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Decoupled weight decay Adam.
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> AdamW {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`; parameters without a gradient are
    /// only decayed.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.0;
            let p = store.get_mut(id).data_mut();
            let decay = 1.0 - lr * c.weight_decay;
            match &grads[i] {
                Some(g) => {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for j in 0..p.len() {
                        let gj = g.data()[j];
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        p[j] = p[j] * decay - lr * mh / (vh.sqrt() + c.eps);
                    }
                }
                None => p.iter_mut().for_each(|x| *x *= decay),
            }
        }
    }
}

/// `lr0 * 0.5 * (1 + cos(pi * progress))`, progress clamped to [0, 1].
pub fn cosine_lr(lr0: f64, progress: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (PI * progress.clamp(0.0, 1.0)).cos())
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.norm_sq())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0.0), 1e-3);
        assert!((cosine_lr(1e-3, 0.5) - 5e-4).abs() < 1e-15);
        assert!(cosine_lr(1e-3, 1.0).abs() < 1e-18);
    }

    #[test]
    fn clip_scales_to_bound() {
        let mut g = vec![Some(Tensor::new(&[2], vec![3.0, 4.0])), None];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // Bias correction makes the first step exactly lr * sign(g) when
        // eps and decay are negligible.
        let mut store = ParamStore::new();
        store.add("p", Tensor::new(&[2], vec![1.0, -1.0]));
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            eps: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(&store, cfg);
        let g = vec![Some(Tensor::new(&[2], vec![0.3, -2.0]))];
        opt.step(&mut store, &g, 0.1);
        let p = store.entries()[0].tensor.data();
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }
}
