//! Central finite-difference checks for backward rules.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Relative errors divide by `max(|analytic|, |numeric|, REL_FLOOR)` so
/// that vanishing gradients are judged by their absolute error.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

/// Compare the analytic gradient of `f(inputs)` (a scalar built on a fresh
/// graph) with central differences of step `h`, for every input element.
pub fn check_gradients(
    inputs: &[Tensor],
    h: f64,
    f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> GradCheck {
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    let grads = g.backward(out);
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    GradCheck {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
    }
}

/// Like [`check_gradients`], but perturbs every `stride`-th element of each
/// parameter in `store`. `f` builds a scalar from the store on a fresh
/// graph.
pub fn check_param_gradients(
    store: &ParamStore,
    h: f64,
    stride: usize,
    f: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> GradCheck {
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let grads = g.backward(out);
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let o = f(&mut g, s);
        g.value(o).item()
    };
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut work = store.clone();
    for id in store.ids() {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in (0..store.get(id).numel()).step_by(stride.max(1)) {
            let v = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = v + h;
            let fp = eval(&work);
            work.get_mut(id).data_mut()[j] = v - h;
            let fm = eval(&work);
            work.get_mut(id).data_mut()[j] = v;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    GradCheck {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
    }
}
