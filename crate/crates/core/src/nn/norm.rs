use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Standardize `x` over index sets given by `set_of(flat_index)`; shared by
/// group and layer normalization.
fn standardize(
    g: &mut Graph,
    x: Var,
    n_sets: usize,
    set_of: impl Fn(usize) -> usize + Clone + 'static,
    eps: f64,
) -> Var {
    let xs = g.value(x);
    let mut count = vec![0usize; n_sets];
    let mut mean = vec![0.0; n_sets];
    for (i, v) in xs.data().iter().enumerate() {
        let s = set_of(i);
        count[s] += 1;
        mean[s] += v;
    }
    for (m, n) in mean.iter_mut().zip(&count) {
        *m /= (*n).max(1) as f64;
    }
    let mut var = vec![0.0; n_sets];
    for (i, v) in xs.data().iter().enumerate() {
        let s = set_of(i);
        var[s] += (v - mean[s]).powi(2);
    }
    let inv_std: Vec<f64> = var
        .iter()
        .zip(&count)
        .map(|(v, n)| 1.0 / (v / (*n).max(1) as f64 + eps).sqrt())
        .collect();
    let out: Vec<f64> = xs
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = set_of(i);
            (v - mean[s]) * inv_std[s]
        })
        .collect();
    let shape = xs.shape().to_vec();
    g.op(Tensor::new(&shape, out), &[x], move |gr, _, y, _| {
        // dx = inv_std * (g - mean(g) - y * mean(g * y)) per set.
        let mut mg = vec![0.0; n_sets];
        let mut mgy = vec![0.0; n_sets];
        for (i, (gv, yv)) in gr.data().iter().zip(y.data()).enumerate() {
            let s = set_of(i);
            mg[s] += gv;
            mgy[s] += gv * yv;
        }
        for s in 0..n_sets {
            let n = count[s].max(1) as f64;
            mg[s] /= n;
            mgy[s] /= n;
        }
        let d: Vec<f64> = gr
            .data()
            .iter()
            .zip(y.data())
            .enumerate()
            .map(|(i, (gv, yv))| {
                let s = set_of(i);
                inv_std[s] * (gv - mg[s] - yv * mgy[s])
            })
            .collect();
        vec![Some(Tensor::new(y.shape(), d))]
    })
}

impl Graph {
    /// Group normalization of a channels-last map `[.., C]` over all
    /// positions and the channels of each group (no affine part).
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Var {
        let c = self.value(x).cols();
        assert!(groups > 0 && c % groups == 0, "channels {c} not divisible by {groups}");
        let per = c / groups;
        standardize(self, x, groups, move |i| (i % c) / per, eps)
    }

    /// Per-row normalization of `x [R, C]` (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let c = self.value(x).cols();
        let r = self.value(x).rows();
        standardize(self, x, r, move |i| i / c, eps)
    }
}
