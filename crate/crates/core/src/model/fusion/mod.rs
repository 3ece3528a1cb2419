//! Graph aggregation over radar feature cells with text-conditioned gating,
//! plus the simpler fusion baselines used for ablations.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{multi_head_attention, TextFeatures};
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMetric {
    #[default]
    FeatureEuclidean,
    SpatialWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub k: usize,
    pub metric: GraphMetric,
    pub include_self: bool,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            k: 9,
            metric: GraphMetric::FeatureEuclidean,
            include_self: false,
        }
    }
}

/// Squared distance with four independent partial sums.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for t in 0..4 {
            let d = x[t] - y[t];
            acc[t] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn by_key_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact feature-space kNN. Bitwise-identical rows are grouped first and
/// distances are taken between distinct vectors only; members of a group
/// share every distance, so ordering by `(distance, index)` is unchanged.
fn feature_knn(x: &[f64], n: usize, c: usize, k: usize, include_self: bool) -> Vec<usize> {
    let row = |i: usize| &x[i * c..(i + 1) * c];
    let mut group_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let key: Vec<u64> = row(i).iter().map(|v| v.to_bits()).collect();
        let g = *group_of.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
    }
    let reps: Vec<usize> = members.iter().map(|m| m[0]).collect();
    // The query itself may occupy one of the gathered slots.
    let need = k + usize::from(!include_self);
    let mut table = vec![0; n * k];
    let mut dists = Vec::with_capacity(reps.len());
    let mut picked: Vec<(f64, usize)> = Vec::new();
    for (gu, query) in members.iter().enumerate() {
        let xu = row(reps[gu]);
        dists.clear();
        dists.extend(reps.iter().enumerate().map(|(g, &r)| (sq_dist(xu, row(r)), g)));
        dists.sort_unstable_by(by_key_then_index);
        // Whole groups, until enough indices and the distance moves on.
        picked.clear();
        for &(d, g) in &dists {
            if picked.len() >= need && picked.last().is_some_and(|p| d > p.0) {
                break;
            }
            picked.extend(members[g].iter().map(|&j| (d, j)));
        }
        picked.sort_unstable_by(by_key_then_index);
        for &i in query {
            let mut it = picked.iter().filter(|e| include_self || e.1 != i);
            for slot in &mut table[i * k..(i + 1) * k] {
                *slot = it.next().expect("enough candidates gathered").1;
            }
        }
    }
    table
}

/// k nearest neighbors of every flattened cell of `f [H, W, C]`; returns
/// an `(H * W) x k` row-major index table.
pub fn build_graph(f: &Tensor, spec: GraphSpec) -> Result<Vec<usize>> {
    let s = f.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("graph input must be [H, W, C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let n = h * w;
    let k = spec.k;
    let available = if spec.include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > available {
        return Err(Error::invalid(format!(
            "k = {k} neighbors requested but only {available} candidates among {n} nodes"
        )));
    }
    if spec.metric == GraphMetric::FeatureEuclidean {
        return Ok(feature_knn(f.data(), n, c, k, spec.include_self));
    }
    let mut table = Vec::with_capacity(n * k);
    let mut cands = Vec::with_capacity(n);
    for i in 0..n {
        let (ri, ci) = ((i / w) as isize, (i % w) as isize);
        // Grow the window until it holds enough cells.
        let mut r = 1isize;
        loop {
            cands.clear();
            for dr in -r..=r {
                for dc in -r..=r {
                    let (rr, cc) = (ri + dr, ci + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = (rr as usize) * w + cc as usize;
                    if j == i && !spec.include_self {
                        continue;
                    }
                    cands.push(((dr * dr + dc * dc) as f64, j));
                }
            }
            // Everything within distance r is inside the window, so the k
            // smallest are final once the k-th is <= r^2.
            cands.sort_by(by_key_then_index);
            let enough = cands.len() >= k && cands[k - 1].0 <= (r * r) as f64;
            if enough || cands.len() == available {
                break;
            }
            r += 1;
        }
        table.extend(cands[..k].iter().map(|&(_, j)| j));
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Ggf,
    GatedDotProduct,
    CrossAttention,
    None,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Ggf,
        FusionKind::GatedDotProduct,
        FusionKind::CrossAttention,
        FusionKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Ggf => "ggf",
            FusionKind::GatedDotProduct => "gated_dot_product",
            FusionKind::CrossAttention => "cross_attention",
            FusionKind::None => "none",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion {s:?}")))
    }
}

/// Per-stage parameters of gated graph fusion.
#[derive(Clone, Debug)]
pub struct GgfParams {
    pub w_agg: Linear,
    pub w_update: Linear,
    pub w_proj: Linear,
    pub w_t: Linear,
}

impl GgfParams {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_r: usize, c_t: usize) -> GgfParams {
        GgfParams {
            w_agg: Linear::new(store, rng, &format!("{name}.w_agg"), c_r, c_r, false),
            w_update: Linear::new(store, rng, &format!("{name}.w_update"), c_r, c_r, false),
            w_proj: Linear::new(store, rng, &format!("{name}.w_proj"), 2 * c_r, c_r, true),
            // Zero gate projection: training starts at the neutral gate.
            w_t: Linear::zeros(store, &format!("{name}.w_t"), c_t, c_r, false),
        }
    }
}

/// `max_j (F_i - F_j) W_agg` over the neighbors of each row of `flat`.
pub fn aggregate(g: &mut Graph, store: &ParamStore, flat: Var, neighbors: &[usize], k: usize, p: &GgfParams) -> Var {
    let rel = g.max_relative(flat, neighbors, k);
    p.w_agg.forward(g, store, rel)
}

/// Max-relative graph convolution with a concatenated residual path,
/// projected back to `C_r` channels. `f` is `[H, W, C_r]`.
pub fn mr_conv(g: &mut Graph, store: &ParamStore, f: Var, neighbors: &[usize], k: usize, p: &GgfParams) -> Var {
    let shape = g.shape(f).to_vec();
    let n = shape[0] * shape[1];
    let flat = g.reshape(f, &[n, shape[2]]);
    let agg = aggregate(g, store, flat, neighbors, k, p);
    let upd = p.w_update.forward(g, store, agg);
    let cat = g.concat_last(&[upd, flat]);
    let out = p.w_proj.forward(g, store, cat);
    g.reshape(out, &shape)
}

/// Per-channel max over real tokens: `[L, C_t]` -> `[1, C_t]`.
pub fn pool_tokens(g: &mut Graph, text: TextFeatures) -> Result<Var> {
    if !text.pad_mask.iter().any(|m| *m) {
        return Err(Error::invalid("text features have no real tokens"));
    }
    let l = g.value(text.matrix).rows();
    Ok(g.segment_max(text.matrix, text.pad_mask, l))
}

/// `F_G * sigmoid(pool(F_T) W_T) + F_G` with the gate broadcast over cells.
pub fn gated_fuse(g: &mut Graph, store: &ParamStore, f_g: Var, text: TextFeatures, w_t: &Linear) -> Result<Var> {
    let pooled = pool_tokens(g, text)?;
    let logits = w_t.forward(g, store, pooled);
    let gate = g.sigmoid(logits);
    let c = g.value(gate).numel();
    let gate = g.reshape(gate, &[c]);
    let gated = g.mul_row(f_g, gate);
    Ok(g.add(gated, f_g))
}

#[derive(Clone, Debug)]
struct CrossAttentionParams {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

#[derive(Clone, Debug)]
enum StageFusion {
    Ggf(GgfParams),
    GatedDotProduct(Linear),
    CrossAttention(CrossAttentionParams),
    None,
}

/// Fusion applied independently to each backbone stage.
#[derive(Clone, Debug)]
pub struct FusionFpn {
    pub kind: FusionKind,
    pub graph: GraphSpec,
    stages: Vec<StageFusion>,
}

pub const CROSS_ATTENTION_HEADS: usize = 4;

impl FusionFpn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: FusionKind,
        graph: GraphSpec,
        stage_channels: [usize; 3],
        c_t: usize,
    ) -> Result<FusionFpn> {
        let stages = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let n = format!("{name}.s{}", i + 1);
                Ok(match kind {
                    FusionKind::Ggf => StageFusion::Ggf(GgfParams::new(store, rng, &n, c, c_t)),
                    FusionKind::GatedDotProduct => {
                        StageFusion::GatedDotProduct(Linear::new(store, rng, &format!("{n}.w_t"), c_t, c, true))
                    }
                    FusionKind::CrossAttention => {
                        let heads = CROSS_ATTENTION_HEADS.min(c);
                        if c % heads != 0 {
                            return Err(Error::Config(format!("stage channels {c} not divisible by {heads} heads")));
                        }
                        StageFusion::CrossAttention(CrossAttentionParams {
                            q: Linear::new(store, rng, &format!("{n}.q"), c, c, false),
                            k: Linear::new(store, rng, &format!("{n}.k"), c_t, c, false),
                            v: Linear::new(store, rng, &format!("{n}.v"), c_t, c, false),
                            o: Linear::new(store, rng, &format!("{n}.o"), c, c, true),
                            heads,
                        })
                    }
                    FusionKind::None => StageFusion::None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FusionFpn { kind, graph, stages })
    }

    pub fn ggf_params(&self, stage: usize) -> Option<&GgfParams> {
        match &self.stages[stage] {
            StageFusion::Ggf(p) => Some(p),
            _ => None,
        }
    }

    /// Fuse one stage map `[H, W, C]` with the text features.
    pub fn forward_stage(&self, g: &mut Graph, store: &ParamStore, stage: usize, f: Var, text: TextFeatures) -> Result<Var> {
        match &self.stages[stage] {
            StageFusion::Ggf(p) => {
                let nbrs = build_graph(g.value(f), self.graph)?;
                let f_g = mr_conv(g, store, f, &nbrs, self.graph.k, p);
                gated_fuse(g, store, f_g, text, &p.w_t)
            }
            StageFusion::GatedDotProduct(w_t) => {
                let pooled = pool_tokens(g, text)?;
                let t = w_t.forward(g, store, pooled);
                let c = g.value(t).numel();
                let t = g.reshape(t, &[c]);
                Ok(g.mul_row(f, t))
            }
            StageFusion::CrossAttention(p) => {
                let shape = g.shape(f).to_vec();
                let n = shape[0] * shape[1];
                let flat = g.reshape(f, &[n, shape[2]]);
                let q = p.q.forward(g, store, flat);
                let k = p.k.forward(g, store, text.matrix);
                let v = p.v.forward(g, store, text.matrix);
                if !text.pad_mask.iter().any(|m| *m) {
                    return Err(Error::invalid("text features have no real tokens"));
                }
                let a = multi_head_attention(g, q, k, v, text.pad_mask, p.heads);
                let a = p.o.forward(g, store, a);
                let out = g.add(flat, a);
                Ok(g.reshape(out, &shape))
            }
            StageFusion::None => Ok(f),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: [Var; 3], text: TextFeatures) -> Result<[Var; 3]> {
        Ok([
            self.forward_stage(g, store, 0, stages[0], text)?,
            self.forward_stage(g, store, 1, stages[1], text)?,
            self.forward_stage(g, store, 2, stages[2], text)?,
        ])
    }
}

#[cfg(test)]
mod tests;
