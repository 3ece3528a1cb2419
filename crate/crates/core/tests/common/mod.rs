//! Oracles shared by the integration tests. Nothing here calls into the
//! code paths it is used to check.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tradar::metrics::{PredictionRecord, ScoredBox};
use tradar::scene::{Box3D, ClassId};

/// BEV corners from the box parameters, counter-clockwise.
fn corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (b.l / 2.0, b.w / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| [b.x + c * u - s * v, b.y + s * u + c * v])
}

/// Inside test against the four edges of a convex CCW polygon.
fn inside(poly: &[[f64; 2]; 4], x: f64, y: f64) -> bool {
    (0..4).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) >= 0.0
    })
}

/// Stratified Monte-Carlo BEV IoU with `side * side` samples.
pub fn mc_iou_bev(a: &Box3D, b: &Box3D, side: usize, seed: u64) -> f64 {
    let (pa, pb) = (corners(a), corners(b));
    let all: Vec<[f64; 2]> = pa.iter().chain(&pb).copied().collect();
    let x0 = all.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let y1 = all.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 0..side {
        for j in 0..side {
            let x = x0 + (x1 - x0) * (i as f64 + rng.random::<f64>()) / side as f64;
            let y = y0 + (y1 - y0) * (j as f64 + rng.random::<f64>()) / side as f64;
            let (ia, ib) = (inside(&pa, x, y), inside(&pb, x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

// ---- planted-error evaluation set -------------------------------------

pub struct PlantedSet {
    pub preds: Vec<PredictionRecord>,
    pub gts: BTreeMap<String, Vec<Box3D>>,
}

fn bx(class: ClassId, x: f64, y: f64, dims: [f64; 3], yaw: f64) -> Box3D {
    Box3D::new(class, [x, y, dims[2] / 2.0], dims, yaw).unwrap()
}

fn dims(class: ClassId) -> [f64; 3] {
    match class {
        ClassId::Car => [4.0, 1.8, 1.5],
        // Square footprint: a quarter turn keeps the same box.
        ClassId::Pedestrian => [0.6, 0.6, 1.7],
        ClassId::Cyclist => [1.8, 0.6, 1.6],
    }
}

/// Twenty samples of axis-aligned referred boxes with one planted error
/// kind per sample; scores are distinct across the whole set.
pub fn planted_set() -> PlantedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut score_pool: Vec<f64> = (1..=200).map(|i| i as f64 / 201.0).collect();
    let mut next_score = || {
        let i = rng.random_range(0..score_pool.len());
        score_pool.swap_remove(i)
    };
    let mut preds = Vec::new();
    let mut gts = BTreeMap::new();
    for s in 0..20 {
        let id = format!("s{s:02}");
        let classes = [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist];
        let n = 1 + s % 3;
        let mut g = Vec::new();
        for k in 0..n {
            let class = classes[(s + k) % 3];
            // Every fourth sample puts its boxes outside the corridor.
            let y = if s % 4 == 3 { 5.5 } else { -3.0 + 3.0 * k as f64 };
            g.push(bx(class, 6.0 + 7.0 * k as f64 + 0.3 * s as f64, y, dims(class), 0.0));
        }
        let mut p: Vec<ScoredBox> = Vec::new();
        for (k, t) in g.iter().enumerate() {
            let mut b = *t;
            match (s + k) % 10 {
                0 => {}
                1 => b.x += 0.2,
                2 => b.x += 3.0,
                3 => {
                    p.push(ScoredBox { bbox: b, score: next_score() });
                }
                4 => continue,
                5 => {
                    b.class = if b.class == ClassId::Car { ClassId::Cyclist } else { ClassId::Car };
                    let d = dims(b.class);
                    (b.l, b.w, b.h, b.z) = (d[0], d[1], d[2], d[2] / 2.0);
                }
                6 => b.yaw = PI,
                7 if b.class == ClassId::Pedestrian => b.yaw = FRAC_PI_2,
                7 => b.z += 0.4,
                8 => p.push(ScoredBox {
                    bbox: bx(b.class, 20.0, 0.5, dims(b.class), 0.0),
                    score: next_score(),
                }),
                _ => b.y += 0.05,
            }
            p.push(ScoredBox { bbox: b, score: next_score() });
        }
        preds.push(PredictionRecord { sample_id: id.clone(), boxes: p });
        gts.insert(id, g);
    }
    PlantedSet { preds, gts }
}

/// 3D IoU of boxes whose yaw is a multiple of a quarter turn.
pub fn axis_aligned_iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let ext = |b: &Box3D| {
        let quarter = (b.yaw.abs() - FRAC_PI_2).abs() < 1e-9;
        if quarter {
            (b.w, b.l)
        } else {
            (b.l, b.w)
        }
    };
    let overlap = |c1: f64, e1: f64, c2: f64, e2: f64| ((c1 + e1 / 2.0).min(c2 + e2 / 2.0) - (c1 - e1 / 2.0).max(c2 - e2 / 2.0)).max(0.0);
    let (ea, eb) = (ext(a), ext(b));
    let inter = overlap(a.x, ea.0, b.x, eb.0) * overlap(a.y, ea.1, b.y, eb.1) * overlap(a.z, a.h, b.z, b.h);
    inter / (a.l * a.w * a.h + b.l * b.w * b.h - inter)
}

pub fn in_corridor(b: &Box3D) -> bool {
    b.y.abs() < 4.0 && (0.0..25.0).contains(&b.x)
}

/// AP and AOS in [0, 1] for one class by sweeping every score threshold.
/// `keep` selects the region; `None` when the class has no ground truth.
pub fn brute_force_ap(
    set: &PlantedSet,
    class: ClassId,
    threshold: f64,
    keep: impl Fn(&Box3D) -> bool,
    recall_points: &[f64],
) -> Option<(f64, f64)> {
    // Greedy matching per sample, highest score first.
    let mut dets: Vec<(f64, Option<f64>)> = Vec::new();
    let mut num_gt = 0;
    for rec in &set.preds {
        let gts: Vec<&Box3D> = set.gts[&rec.sample_id].iter().filter(|g| g.class == class && keep(g)).collect();
        num_gt += gts.len();
        let mut ps: Vec<&ScoredBox> = rec.boxes.iter().filter(|p| p.bbox.class == class && keep(&p.bbox)).collect();
        ps.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let mut used = vec![false; gts.len()];
        for p in ps {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                let iou = axis_aligned_iou_3d(&p.bbox, g);
                if !used[gi] && iou >= threshold && best.map_or(true, |(_, v)| iou > v) {
                    best = Some((gi, iou));
                }
            }
            let sim = best.map(|(gi, _)| {
                used[gi] = true;
                (1.0 + (p.bbox.yaw - gts[gi].yaw).cos()) / 2.0
            });
            dets.push((p.score, sim));
        }
    }
    if num_gt == 0 {
        return None;
    }
    // One operating point per distinct score threshold.
    let points: Vec<(f64, f64, f64)> = dets
        .iter()
        .map(|&(t, _)| {
            let above: Vec<&(f64, Option<f64>)> = dets.iter().filter(|d| d.0 >= t).collect();
            let tp = above.iter().filter(|d| d.1.is_some()).count() as f64;
            let sim: f64 = above.iter().filter_map(|d| d.1).sum();
            let n = above.len() as f64;
            (tp / num_gt as f64, tp / n, sim / n)
        })
        .collect();
    let mut ap = 0.0;
    let mut aos = 0.0;
    for &r in recall_points {
        let best = points.iter().filter(|p| p.0 >= r - 1e-12);
        let (p, o) = best.fold((0.0f64, 0.0f64), |(p, o), q| (p.max(q.1), o.max(q.2)));
        ap += p;
        aos += o;
    }
    Some((ap / recall_points.len() as f64, aos / recall_points.len() as f64))
}

pub fn forty_points() -> Vec<f64> {
    (1..=40).map(|i| i as f64 / 40.0).collect()
}

pub fn eleven_points() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
