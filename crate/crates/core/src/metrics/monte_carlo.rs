//! Sampling-based area and volume estimates, used to cross-check the exact
//! clipping routines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::Box3D;

fn bounds(boxes: &[&Box3D]) -> (f64, f64, f64, f64) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for b in boxes {
        for c in b.bev_corners() {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    (lo[0], lo[1], hi[0], hi[1])
}

fn inside_bev(b: &Box3D, x: f64, y: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = x - b.x;
    let dy = y - b.y;
    (c * dx + s * dy).abs() <= b.l / 2.0 && (-s * dx + c * dy).abs() <= b.w / 2.0
}

/// BEV IoU estimated with one jittered sample per cell of a
/// `side x side` grid over the joint bounding rectangle.
pub fn monte_carlo_iou_bev(a: &Box3D, b: &Box3D, side: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, y0, x1, y1) = bounds(&[a, b]);
    let sx = (x1 - x0) / side as f64;
    let sy = (y1 - y0) / side as f64;
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for i in 0..side {
        for j in 0..side {
            let x = x0 + (i as f64 + rng.random::<f64>()) * sx;
            let y = y0 + (j as f64 + rng.random::<f64>()) * sy;
            let ia = inside_bev(a, x, y);
            let ib = inside_bev(b, x, y);
            in_a += ia as u64;
            in_b += ib as u64;
            both += (ia && ib) as u64;
        }
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Volumetric IoU from `samples` uniform draws in the joint bounding box.
pub fn monte_carlo_iou_3d(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, y0, x1, y1) = bounds(&[a, b]);
    let z0 = (a.z - a.h / 2.0).min(b.z - b.h / 2.0);
    let z1 = (a.z + a.h / 2.0).max(b.z + b.h / 2.0);
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for _ in 0..samples {
        let p = [
            rng.random_range(x0..x1),
            rng.random_range(y0..y1),
            rng.random_range(z0..z1),
        ];
        let ia = inside_bev(a, p[0], p[1]) && (p[2] - a.z).abs() <= a.h / 2.0;
        let ib = inside_bev(b, p[0], p[1]) && (p[2] - b.z).abs() <= b.h / 2.0;
        in_a += ia as u64;
        in_b += ib as u64;
        both += (ia && ib) as u64;
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}
