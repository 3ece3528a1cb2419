//! Center-based grounding head: targets, loss, network, and decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::neck::{default_deform_spec, DeformConv};
use super::pillar::PillarGridConfig;
use crate::error::{Error, Result};
use crate::metrics::{rotated_iou_bev, ScoredBox};
use crate::nn::layers::{Conv2d, ConvBlock, GroupNorm, LEAKY_SLOPE};
use crate::nn::ops::sigmoid;
use crate::nn::{ConvSpec, Graph, ParamStore, Tensor, Var};
use crate::scene::{normalize_angle, Box3D, ClassId};

pub const NUM_CLASSES: usize = ClassId::COUNT;
pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_GAMMA: i32 = 4;
pub const HEATMAP_EPS: f64 = 1e-4;
pub const DEFAULT_REG_WEIGHT: f64 = 0.25;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
pub const MIN_RADIUS: usize = 2;
pub const GAUSSIAN_OVERLAP: f64 = 0.1;
/// Initial heatmap bias, `-ln((1 - 0.1) / 0.1)`.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawEncoding {
    /// `(sin, cos)` pair.
    #[default]
    SinCos,
    /// The raw angle.
    Raw,
}

impl YawEncoding {
    /// Regression channels: `dx, dy, z, log l, log w, log h` + yaw part.
    pub fn channels(self) -> usize {
        match self {
            YawEncoding::SinCos => 8,
            YawEncoding::Raw => 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Positive {
    /// Row-major cell index.
    pub cell: usize,
    pub class: ClassId,
    pub reg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadTargets {
    /// `[H, W, 3]` class heatmaps in [0, 1].
    pub heatmap: Tensor,
    pub positives: Vec<Positive>,
    /// Boxes whose center fell outside the grid.
    pub skipped: usize,
}

impl HeadTargets {
    /// `[H, W, 3]` indicator of positive cells.
    pub fn positive_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.heatmap.numel()];
        for p in &self.positives {
            m[p.cell * NUM_CLASSES + p.class.index()] = true;
        }
        m
    }
}

/// CornerNet radius for a `height x width` footprint (in cells) such that
/// a box displaced within the radius keeps IoU >= `min_overlap`.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let (h, w, o) = (height, width, min_overlap);
    let b1 = h + w;
    let c1 = w * h * (1.0 - o) / (1.0 + o);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - o) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;
    let a3 = 4.0 * o;
    let b3 = -2.0 * o * (h + w);
    let c3 = (o - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

/// Integer splat radius for a box on the grid.
pub fn box_radius(b: &Box3D, grid: &PillarGridConfig) -> usize {
    let r = gaussian_radius(b.l / grid.cell_size, b.w / grid.cell_size, GAUSSIAN_OVERLAP);
    (r.max(0.0).floor() as usize).max(MIN_RADIUS)
}

/// Value of the splat with `radius` at integer offset `(dr, dc)`.
pub fn gaussian_value(radius: usize, dr: isize, dc: isize) -> f64 {
    let r = radius as isize;
    if dr.abs() > r || dc.abs() > r {
        return 0.0;
    }
    let sigma = (2.0 * radius as f64 + 1.0) / 6.0;
    (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp()
}

pub fn encode_box(b: &Box3D, row: usize, col: usize, grid: &PillarGridConfig, yaw: YawEncoding) -> Vec<f64> {
    let dx = (b.x - grid.x_range.0) / grid.cell_size - col as f64;
    let dy = (b.y - grid.y_range.0) / grid.cell_size - row as f64;
    let mut v = vec![dx, dy, b.z, b.l.ln(), b.w.ln(), b.h.ln()];
    match yaw {
        YawEncoding::SinCos => v.extend([b.yaw.sin(), b.yaw.cos()]),
        YawEncoding::Raw => v.push(b.yaw),
    }
    v
}

pub fn decode_box(
    reg: &[f64],
    row: usize,
    col: usize,
    class: ClassId,
    grid: &PillarGridConfig,
    yaw: YawEncoding,
) -> Box3D {
    let x = grid.x_range.0 + (col as f64 + reg[0]) * grid.cell_size;
    let y = grid.y_range.0 + (row as f64 + reg[1]) * grid.cell_size;
    let theta = match yaw {
        YawEncoding::SinCos => reg[6].atan2(reg[7]),
        YawEncoding::Raw => reg[6],
    };
    let clampexp = |v: f64| v.clamp(-10.0, 10.0).exp();
    Box3D {
        x,
        y,
        z: reg[2],
        l: clampexp(reg[3]),
        w: clampexp(reg[4]),
        h: clampexp(reg[5]),
        yaw: normalize_angle(theta),
        class,
    }
}

/// Gaussian heatmaps and peak-cell regression targets for the referred
/// boxes only.
pub fn assign_targets(referred: &[Box3D], grid: &PillarGridConfig, yaw: YawEncoding) -> HeadTargets {
    let (h, w) = (grid.height(), grid.width());
    let mut heat = vec![0.0f64; h * w * NUM_CLASSES];
    let mut positives: Vec<Positive> = Vec::new();
    let mut skipped = 0;
    for b in referred {
        let Some((row, col)) = grid.cell_of(b.x, b.y) else {
            skipped += 1;
            continue;
        };
        let radius = box_radius(b, grid) as isize;
        let ch = b.class.index();
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let v = gaussian_value(radius as usize, dr, dc);
                let slot = &mut heat[(r as usize * w + c as usize) * NUM_CLASSES + ch];
                *slot = slot.max(v);
            }
        }
        let cell = row * w + col;
        let reg = encode_box(b, row, col, grid, yaw);
        match positives.iter_mut().find(|p| p.cell == cell && p.class == b.class) {
            Some(p) => p.reg = reg,
            None => positives.push(Positive {
                cell,
                class: b.class,
                reg,
            }),
        }
    }
    HeadTargets {
        heatmap: Tensor::new(&[h, w, NUM_CLASSES], heat),
        positives,
        skipped,
    }
}

/// Per-element focal loss value and derivative w.r.t. the logit.
fn focal_terms(x: f64, y: f64) -> (f64, f64) {
    let raw = sigmoid(x);
    let p = raw.clamp(HEATMAP_EPS, 1.0 - HEATMAP_EPS);
    let dpdx = if raw == p { p * (1.0 - p) } else { 0.0 };
    let a = FOCAL_ALPHA;
    if y >= 1.0 {
        let l = -(1.0 - p).powi(a) * p.ln();
        let dl = a as f64 * (1.0 - p).powi(a - 1) * p.ln() - (1.0 - p).powi(a) / p;
        (l, dl * dpdx)
    } else {
        let wneg = (1.0 - y).powi(FOCAL_GAMMA);
        let l = -wneg * p.powi(a) * (1.0 - p).ln();
        let dl = -wneg * (a as f64 * p.powi(a - 1) * (1.0 - p).ln() - p.powi(a) / (1.0 - p));
        (l, dl * dpdx)
    }
}

/// Penalty-reduced focal loss on heatmap logits, normalized by the number
/// of positive cells (at least 1).
pub fn focal_loss(g: &mut Graph, logits: Var, target: &Tensor) -> Var {
    let x = g.value(logits);
    assert_eq!(x.numel(), target.numel(), "heatmap shape mismatch");
    let num_pos = target.data().iter().filter(|v| **v >= 1.0).count().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(x.numel());
    for (&xv, &yv) in x.data().iter().zip(target.data()) {
        let (l, d) = focal_terms(xv, yv);
        total += l;
        grad.push(d / num_pos);
    }
    let shape = x.shape().to_vec();
    g.op(Tensor::scalar(total / num_pos), &[logits], move |gr, _, _, _| {
        let s = gr.item();
        vec![Some(Tensor::new(&shape, grad.iter().map(|d| d * s).collect()))]
    })
}

fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Sum of smooth-L1 over all elements of `x - target`, divided by `norm`.
pub fn smooth_l1_loss(g: &mut Graph, x: Var, target: &Tensor, beta: f64, norm: f64) -> Var {
    let xv = g.value(x);
    assert_eq!(xv.numel(), target.numel());
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(xv.numel());
    for (a, b) in xv.data().iter().zip(target.data()) {
        let (l, d) = smooth_l1(a - b, beta);
        total += l;
        grad.push(d / norm);
    }
    let shape = xv.shape().to_vec();
    g.op(Tensor::scalar(total / norm), &[x], move |gr, _, _, _| {
        let s = gr.item();
        vec![Some(Tensor::new(&shape, grad.iter().map(|d| d * s).collect()))]
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub heatmap: Var,
    pub regression: Var,
}

/// `L_hm + beta * L_reg`.
pub fn compute_loss(
    g: &mut Graph,
    heat_logits: Var,
    reg: Var,
    targets: &HeadTargets,
    beta: f64,
) -> Result<LossVars> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("regression weight must be >= 0, got {beta}")));
    }
    let hm = focal_loss(g, heat_logits, &targets.heatmap);
    let r = g.value(reg).cols();
    let cells = g.value(reg).numel() / r;
    let flat = g.reshape(reg, &[cells, r]);
    let regression = if targets.positives.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let idx: Vec<usize> = targets.positives.iter().map(|p| p.cell).collect();
        let picked = g.gather_rows(flat, &idx);
        let tgt: Vec<f64> = targets.positives.iter().flat_map(|p| p.reg.iter().copied()).collect();
        let tgt = Tensor::new(&[idx.len(), r], tgt);
        smooth_l1_loss(g, picked, &tgt, SMOOTH_L1_BETA, targets.positives.len() as f64)
    };
    let weighted = g.scale(regression, beta);
    let total = g.add(hm, weighted);
    Ok(LossVars {
        total,
        heatmap: hm,
        regression,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub top_k: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_k: 20,
            score_threshold: 0.1,
            nms_iou: 0.1,
        }
    }
}

/// Peak extraction from heatmap probabilities `[H, W, 3]` and regression
/// `[H, W, R]`. Output is sorted by (score desc, row-major cell, class).
pub fn decode_probs(
    probs: &Tensor,
    reg: &Tensor,
    grid: &PillarGridConfig,
    yaw: YawEncoding,
    cfg: &DecodeConfig,
) -> Vec<ScoredBox> {
    let (h, w) = (grid.height(), grid.width());
    let r = reg.cols();
    let p = probs.data();
    let at = |row: usize, col: usize, ch: usize| p[(row * w + col) * NUM_CLASSES + ch];
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            for ch in 0..NUM_CLASSES {
                let s = at(row, col, ch);
                if s <= cfg.score_threshold {
                    continue;
                }
                let mut peak = true;
                'n: for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (rr, cc) = (row as isize + dr, col as isize + dc);
                        if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        if at(rr as usize, cc as usize, ch) > s {
                            peak = false;
                            break 'n;
                        }
                    }
                }
                if peak {
                    cands.push((s, row * w + col, ch));
                }
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cands.truncate(cfg.top_k);
    let mut kept: Vec<ScoredBox> = Vec::new();
    for (s, cell, ch) in cands {
        let class = ClassId::from_index(ch).expect("class channel");
        let bbox = decode_box(&reg.data()[cell * r..(cell + 1) * r], cell / w, cell % w, class, grid, yaw);
        let suppressed = kept
            .iter()
            .any(|k| k.bbox.class == class && rotated_iou_bev(&k.bbox, &bbox) > cfg.nms_iou);
        if !suppressed {
            kept.push(ScoredBox { bbox, score: s });
        }
    }
    kept
}

/// [`decode_probs`] on heatmap logits.
pub fn decode(
    logits: &Tensor,
    reg: &Tensor,
    grid: &PillarGridConfig,
    yaw: YawEncoding,
    cfg: &DecodeConfig,
) -> Vec<ScoredBox> {
    decode_probs(&logits.map(sigmoid), reg, grid, yaw, cfg)
}

/// Shared trunk, optional deformable layer, and the two branches.
#[derive(Clone, Debug)]
pub struct HeadNet {
    shared: ConvBlock,
    deform: Option<(DeformConv, GroupNorm)>,
    hm_block: ConvBlock,
    hm_out: Conv2d,
    reg_block: ConvBlock,
    reg_out: Conv2d,
    pub yaw: YawEncoding,
}

impl HeadNet {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c: usize,
        own_deform: bool,
        groups: usize,
        yaw: YawEncoding,
    ) -> Result<HeadNet> {
        let shared = ConvBlock::new(store, rng, &format!("{name}.shared"), c_in, c, ConvSpec::same(3));
        let deform = if own_deform {
            Some((
                DeformConv::new(store, rng, &format!("{name}.deform"), c, c, default_deform_spec(groups))?,
                GroupNorm::new(store, &format!("{name}.deform_norm"), c),
            ))
        } else {
            None
        };
        let hm_block = ConvBlock::new(store, rng, &format!("{name}.hm"), c, c, ConvSpec::same(3));
        let hm_out = Conv2d::new(store, rng, &format!("{name}.hm_out"), c, NUM_CLASSES, ConvSpec::same(1), true);
        store.set(hm_out.b.expect("bias"), Tensor::full(&[NUM_CLASSES], HEATMAP_PRIOR_BIAS));
        let reg_block = ConvBlock::new(store, rng, &format!("{name}.reg"), c, c, ConvSpec::same(3));
        let reg_out = Conv2d::new(store, rng, &format!("{name}.reg_out"), c, yaw.channels(), ConvSpec::same(1), true);
        Ok(HeadNet {
            shared,
            deform,
            hm_block,
            hm_out,
            reg_block,
            reg_out,
            yaw,
        })
    }

    /// `(heatmap logits [H, W, 3], regression [H, W, R])`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> (Var, Var) {
        let mut t = self.shared.forward(g, store, x);
        if let Some((d, n)) = &self.deform {
            let y = d.forward(g, store, t);
            let y = n.forward(g, store, y);
            t = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let hm = self.hm_block.forward(g, store, t);
        let hm = self.hm_out.forward(g, store, hm);
        let reg = self.reg_block.forward(g, store, t);
        let reg = self.reg_out.forward(g, store, reg);
        (hm, reg)
    }
}
