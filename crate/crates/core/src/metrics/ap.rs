//! Greedy matching and interpolated AP / AOS.

use serde::{Deserialize, Serialize};

use super::iou::{iou_3d, rotated_iou_bev};
use crate::scene::{Box3D, ClassId};

/// Overlap used for matching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bev,
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouMode::Bev => rotated_iou_bev(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    #[default]
    #[serde(rename = "40")]
    Forty,
    #[serde(rename = "11")]
    Eleven,
}

impl Interpolation {
    /// Recall levels the interpolated precision is averaged over.
    pub fn recall_points(self) -> Vec<f64> {
        match self {
            Interpolation::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
            Interpolation::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub bbox: Box3D,
    pub score: f64,
}

/// One sample's predictions and ground truth for a single class.
#[derive(Clone, Debug, Default)]
pub struct SampleBoxes {
    pub preds: Vec<ScoredBox>,
    pub gts: Vec<Box3D>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApResult {
    /// In [0, 1]; `None` when there is no ground truth.
    pub ap: Option<f64>,
    pub aos: Option<f64>,
    pub num_gt: usize,
    pub num_pred: usize,
}

/// One ranked detection after matching: orientation similarity if it is a
/// true positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedMatch {
    pub score: f64,
    pub similarity: Option<f64>,
}

/// `(1 + cos(d_yaw)) / 2`, without folding 180 degree flips.
pub fn orientation_similarity(pred_yaw: f64, gt_yaw: f64) -> f64 {
    (1.0 + (pred_yaw - gt_yaw).cos()) / 2.0
}

/// Greedy matching of one sample: predictions in descending score (ties by
/// input order) take the unmatched ground truth with the highest overlap
/// at or above `threshold`.
pub fn match_sample(s: &SampleBoxes, threshold: f64, mode: IouMode) -> Vec<RankedMatch> {
    let mut order: Vec<usize> = (0..s.preds.len()).collect();
    order.sort_by(|&a, &b| s.preds[b].score.total_cmp(&s.preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; s.gts.len()];
    order
        .into_iter()
        .map(|pi| {
            let p = &s.preds[pi];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in s.gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = mode.iou(&p.bbox, gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            let similarity = best.map(|(gi, _)| {
                taken[gi] = true;
                orientation_similarity(p.bbox.yaw, s.gts[gi].yaw)
            });
            RankedMatch {
                score: p.score,
                similarity,
            }
        })
        .collect()
}

/// Interpolated AP and AOS from matched detections pooled over samples.
/// Ranking is by descending score; ties keep pooled order.
pub fn ap_from_matches(mut matches: Vec<RankedMatch>, num_gt: usize, interp: Interpolation) -> (f64, f64) {
    if num_gt == 0 {
        return (0.0, 0.0);
    }
    matches.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut tp = 0.0;
    let mut sim = 0.0;
    let mut curve = Vec::with_capacity(matches.len());
    for (i, m) in matches.iter().enumerate() {
        if let Some(s) = m.similarity {
            tp += 1.0;
            sim += s;
        }
        let n = (i + 1) as f64;
        curve.push((tp / num_gt as f64, tp / n, sim / n));
    }
    let points = interp.recall_points();
    let mut ap = 0.0;
    let mut aos = 0.0;
    for &r in &points {
        let (p, o) = curve
            .iter()
            .filter(|(rec, _, _)| *rec >= r - 1e-12)
            .fold((0.0f64, 0.0f64), |(p, o), (_, pp, oo)| (p.max(*pp), o.max(*oo)));
        ap += p;
        aos += o;
    }
    (ap / points.len() as f64, aos / points.len() as f64)
}

/// AP and AOS for one class over a set of samples. Boxes of other classes
/// are ignored on both sides.
pub fn average_precision(
    samples: &[SampleBoxes],
    class: ClassId,
    threshold: f64,
    mode: IouMode,
    interp: Interpolation,
) -> ApResult {
    let mut matches = Vec::new();
    let mut num_gt = 0;
    let mut num_pred = 0;
    for s in samples {
        let filtered = SampleBoxes {
            preds: s.preds.iter().filter(|p| p.bbox.class == class).copied().collect(),
            gts: s.gts.iter().filter(|g| g.class == class).copied().collect(),
        };
        num_gt += filtered.gts.len();
        num_pred += filtered.preds.len();
        matches.extend(match_sample(&filtered, threshold, mode));
    }
    if num_gt == 0 {
        return ApResult {
            ap: None,
            aos: None,
            num_gt,
            num_pred,
        };
    }
    let (ap, aos) = ap_from_matches(matches, num_gt, interp);
    ApResult {
        ap: Some(ap),
        aos: Some(aos),
        num_gt,
        num_pred,
    }
}
