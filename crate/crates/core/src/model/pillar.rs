//! Pillarization of point clouds and the learned per-pillar encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Linear, LEAKY_SLOPE};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::scene::PointCloud;

/// Decorations appended to every point: offsets to the pillar point mean
/// (x, y, z) and to the cell center (x, y).
pub const DECORATIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PillarGridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub cell_size: f64,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
    pub out_channels: usize,
}

impl Default for PillarGridConfig {
    fn default() -> Self {
        PillarGridConfig {
            x_range: (0.0, 15.36),
            y_range: (-7.68, 7.68),
            cell_size: 0.16,
            max_pillars: 4096,
            max_points_per_pillar: 10,
            out_channels: 32,
        }
    }
}

impl PillarGridConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cell_size > 0.0
            && self.x_range.0 < self.x_range.1
            && self.y_range.0 < self.y_range.1
            && self.max_pillars > 0
            && self.max_points_per_pillar > 0
            && self.out_channels > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pillar grid {self:?}")))
        }
    }

    /// Rows (along y).
    pub fn height(&self) -> usize {
        ((self.y_range.1 - self.y_range.0) / self.cell_size - 1e-9).ceil() as usize
    }

    /// Columns (along x).
    pub fn width(&self) -> usize {
        ((self.x_range.1 - self.x_range.0) / self.cell_size - 1e-9).ceil() as usize
    }

    /// `(row, col)` of the cell containing `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_range.0 && x < self.x_range.1 && y >= self.y_range.0 && y < self.y_range.1) {
            return None;
        }
        let col = ((x - self.x_range.0) / self.cell_size).floor() as usize;
        let row = ((y - self.y_range.0) / self.cell_size).floor() as usize;
        (row < self.height() && col < self.width()).then_some((row, col))
    }

    /// Metric `(x, y)` of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_range.0 + (col as f64 + 0.5) * self.cell_size,
            self.y_range.0 + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Dense per-pillar point tensor, padded to `N` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Pillars {
    /// `P x N x D'` values, padded slots zero.
    pub features: Vec<f64>,
    /// `(row, col)` per pillar.
    pub coords: Vec<(usize, usize)>,
    /// Retained points per pillar (at most `N`).
    pub counts: Vec<usize>,
    /// Point dimension after decoration.
    pub dim: usize,
    pub max_points: usize,
    /// Points removed by the per-pillar cap or the pillar cap.
    pub dropped_points: usize,
    pub out_of_range: usize,
}

impl Pillars {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Validity of every padded slot, `P * N` entries.
    pub fn slot_mask(&self) -> Vec<bool> {
        self.counts
            .iter()
            .flat_map(|&c| (0..self.max_points).map(move |i| i < c))
            .collect()
    }
}

/// Bin points into pillars, decorate, cap at `N` points per pillar by
/// stride sampling and at `P` pillars by descending count (ties by
/// row-major cell index).
pub fn pillarize(pc: &PointCloud, cfg: &PillarGridConfig) -> Pillars {
    let w = cfg.width();
    let d = pc.dim();
    let n_max = cfg.max_points_per_pillar;
    let mut cells: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut out_of_range = 0;
    for (i, p) in pc.points().enumerate() {
        match cfg.cell_of(p[0] as f64, p[1] as f64) {
            Some((r, c)) => cells.entry(r * w + c).or_default().push(i),
            None => out_of_range += 1,
        }
    }
    let mut order: Vec<(usize, Vec<usize>)> = cells.into_iter().collect();
    order.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let mut dropped = 0;
    if order.len() > cfg.max_pillars {
        dropped += order[cfg.max_pillars..].iter().map(|(_, v)| v.len()).sum::<usize>();
        order.truncate(cfg.max_pillars);
    }
    let dim = d + DECORATIONS;
    let mut features = vec![0.0; order.len() * n_max * dim];
    let mut coords = Vec::with_capacity(order.len());
    let mut counts = Vec::with_capacity(order.len());
    for (pi, (cell, members)) in order.iter().enumerate() {
        let n = members.len();
        let kept: Vec<usize> = if n > n_max {
            dropped += n - n_max;
            (0..n_max).map(|i| members[i * n / n_max]).collect()
        } else {
            members.clone()
        };
        let (row, col) = (cell / w, cell % w);
        let (cx, cy) = cfg.cell_center(row, col);
        let mut mean = [0.0; 3];
        for &i in &kept {
            for (m, v) in mean.iter_mut().zip(pc.point(i)) {
                *m += *v as f64;
            }
        }
        for m in &mut mean {
            *m /= kept.len() as f64;
        }
        for (slot, &i) in kept.iter().enumerate() {
            let p = pc.point(i);
            let base = (pi * n_max + slot) * dim;
            let row_out = &mut features[base..base + dim];
            for (o, v) in row_out.iter_mut().zip(p) {
                *o = *v as f64;
            }
            let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
            row_out[d] = x - mean[0];
            row_out[d + 1] = y - mean[1];
            row_out[d + 2] = z - mean[2];
            row_out[d + 3] = x - cx;
            row_out[d + 4] = y - cy;
        }
        coords.push((row, col));
        counts.push(kept.len());
    }
    Pillars {
        features,
        coords,
        counts,
        dim,
        max_points: n_max,
        dropped_points: dropped,
        out_of_range,
    }
}

/// Per-point linear map + leaky ReLU, masked max over the points of each
/// pillar, scatter into an `[H, W, C]` pseudo-image.
#[derive(Clone, Debug)]
pub struct PillarEncoder {
    pub linear: Linear,
    pub point_dim: usize,
    pub grid: PillarGridConfig,
}

impl PillarEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        point_fields: usize,
        grid: PillarGridConfig,
    ) -> PillarEncoder {
        let point_dim = point_fields + DECORATIONS;
        PillarEncoder {
            linear: Linear::new(store, rng, &format!("{name}.linear"), point_dim, grid.out_channels, true),
            point_dim,
            grid,
        }
    }

    /// Encode with the point features entering as a constant.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pillars: &Pillars) -> Var {
        let x = g.constant(Tensor::new(
            &[pillars.len() * pillars.max_points, pillars.dim],
            pillars.features.clone(),
        ));
        self.forward_var(g, store, pillars, x)
    }

    /// Encode given the `[P * N, D']` point features as a graph node.
    pub fn forward_var(&self, g: &mut Graph, store: &ParamStore, pillars: &Pillars, x: Var) -> Var {
        assert_eq!(pillars.dim, self.point_dim, "point dimension mismatch");
        let (h, w) = (self.grid.height(), self.grid.width());
        let y = self.linear.forward(g, store, x);
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        let pooled = g.segment_max(y, &pillars.slot_mask(), pillars.max_points);
        let positions: Vec<usize> = pillars.coords.iter().map(|&(r, c)| r * w + c).collect();
        g.scatter_rows(pooled, &positions, &[h, w, self.grid.out_channels])
    }
}

/// Occupied-cell mask `[H * W]` of a pillar set.
pub fn occupancy(pillars: &Pillars, grid: &PillarGridConfig) -> Vec<bool> {
    let mut m = vec![false; grid.height() * grid.width()];
    for &(r, c) in &pillars.coords {
        m[r * grid.width() + c] = true;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, check_param_gradients};
    use crate::scene::PointSchema;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encoder(grid: PillarGridConfig, seed: u64) -> (ParamStore, PillarEncoder) {
        let mut store = ParamStore::new();
        let enc = PillarEncoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), "p", 4, grid);
        (store, enc)
    }

    fn encode(store: &ParamStore, enc: &PillarEncoder, pc: &PointCloud) -> Tensor {
        let mut g = Graph::inference();
        let y = enc.forward(&mut g, store, &pillarize(pc, &enc.grid));
        g.value(y).clone()
    }

    fn leaky(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            LEAKY_SLOPE * v
        }
    }

    fn lidar_cloud(points: &[[f32; 4]]) -> PointCloud {
        PointCloud::new(PointSchema::lidar(), points.iter().flatten().copied().collect()).unwrap()
    }

    fn small_grid() -> PillarGridConfig {
        PillarGridConfig {
            x_range: (0.0, 4.0),
            y_range: (-2.0, 2.0),
            cell_size: 1.0,
            max_pillars: 16,
            max_points_per_pillar: 10,
            out_channels: 4,
        }
    }

    #[test]
    fn grid_dims() {
        let g = PillarGridConfig::default();
        assert_eq!((g.height(), g.width()), (96, 96));
    }

    #[test]
    fn empty_cloud_gives_zero_image() {
        let grid = small_grid();
        let p = pillarize(&PointCloud::empty(PointSchema::lidar()), &grid);
        assert!(p.is_empty());
        let mut store = ParamStore::new();
        let enc = PillarEncoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), "p", 4, grid);
        let mut g = Graph::new();
        let y = enc.forward(&mut g, &store, &p);
        assert_eq!(g.shape(y), &[4, 4, 4]);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn point_at_cell_center_has_zero_decorations() {
        let p = pillarize(&lidar_cloud(&[[1.5, 0.5, 0.3, 0.2]]), &small_grid());
        assert_eq!(p.coords, vec![(2, 1)]);
        assert_eq!(&p.features[4..9], &[0.0; 5]);
    }

    #[test]
    fn stride_subsampling_caps_points() {
        let pts: Vec<[f32; 4]> = (0..12).map(|i| [0.5, 0.5, i as f32 * 0.1, 0.0]).collect();
        let p = pillarize(&lidar_cloud(&pts), &small_grid());
        assert_eq!(p.counts, vec![10]);
        assert_eq!(p.dropped_points, 2);
        // Stride sampling keeps indices floor(i * 12 / 10).
        let z: Vec<f64> = (0..10).map(|s| p.features[s * p.dim + 2]).collect();
        let expect: Vec<f64> = (0..10).map(|i| ((i * 12 / 10) as f32 * 0.1) as f64).collect();
        assert_eq!(z, expect);
    }

    #[test]
    fn pillar_cap_drops_smallest() {
        let grid = PillarGridConfig {
            max_pillars: 1,
            ..small_grid()
        };
        let pts = [[0.5, 0.5, 0.0, 0.0], [2.5, 0.5, 0.0, 0.0], [2.6, 0.6, 0.0, 0.0]];
        let p = pillarize(&lidar_cloud(&pts), &grid);
        assert_eq!(p.coords, vec![(2, 2)]);
        assert_eq!(p.dropped_points, 1);
        let out = pillarize(&lidar_cloud(&[[9.0, 0.0, 0.0, 0.0]]), &grid);
        assert_eq!(out.out_of_range, 1);
    }

    #[test]
    fn two_points_hand_computed() {
        let (store, enc) = encoder(small_grid(), 1);
        let pts = [[0.2, -1.7, 0.4, 1.0], [0.9, -1.1, -0.2, -3.0]];
        let out = encode(&store, &enc, &lidar_cloud(&pts));
        // Both points land in row 0, col 0; cell center (0.5, -1.5).
        let mean = [0.55, -1.4, 0.1];
        let w = store.get(enc.linear.w);
        let b = store.get(enc.linear.b.unwrap());
        let mut expect = vec![f64::NEG_INFINITY; 4];
        for p in pts {
            let p = p.map(f64::from);
            let x = [p[0], p[1], p[2], p[3], p[0] - mean[0], p[1] - mean[1], p[2] - mean[2], p[0] - 0.5, p[1] + 1.5];
            for (o, e) in expect.iter_mut().enumerate() {
                let z: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * 4 + o]).sum::<f64>() + b.data()[o];
                *e = e.max(leaky(z));
            }
        }
        for (o, e) in expect.iter().enumerate() {
            assert!((out.data()[o] - e).abs() < 1e-6, "channel {o}: {} vs {e}", out.data()[o]);
        }
        assert!(out.data()[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn padded_slots_never_reach_the_output() {
        let (store, enc) = encoder(small_grid(), 2);
        let pts = [[0.2, -1.7, 0.4, 1.0], [2.9, 1.1, -0.2, -3.0], [2.8, 1.3, 0.0, 0.5]];
        let pillars = pillarize(&lidar_cloud(&pts), &enc.grid);
        let run = |features: Vec<f64>| {
            let mut g = Graph::inference();
            let x = g.constant(Tensor::new(&[pillars.len() * pillars.max_points, pillars.dim], features));
            let y = enc.forward_var(&mut g, &store, &pillars, x);
            g.value(y).clone()
        };
        let clean = run(pillars.features.clone());
        let mask = pillars.slot_mask();
        let noisy: Vec<f64> = pillars
            .features
            .iter()
            .enumerate()
            .map(|(i, v)| if mask[i / pillars.dim] { *v } else { 1e3 * (i as f64).sin() })
            .collect();
        assert_eq!(run(noisy), clean);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let grid = PillarGridConfig {
            max_points_per_pillar: 3,
            out_channels: 3,
            ..small_grid()
        };
        let (store, enc) = encoder(grid, 3);
        let pts = [
            [0.2, -1.7, 0.4, 1.0],
            [0.9, -1.1, -0.2, -3.0],
            [2.9, 1.1, -0.2, -3.0],
            [3.5, 0.2, 0.7, 2.0],
        ];
        let pillars = pillarize(&lidar_cloud(&pts), &enc.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights = Tensor::from_fn(&[4, 4, 3], |_| rng.random_range(-1.0..1.0));
        let readout = |g: &mut Graph, y: Var| {
            let w = g.constant(weights.clone());
            let p = g.mul(y, w);
            g.sum(p)
        };
        let x = Tensor::new(&[pillars.len() * pillars.max_points, pillars.dim], pillars.features.clone());
        let r = check_gradients(&[x.clone()], 1e-6, |g, v| {
            let y = enc.forward_var(g, &store, &pillars, v[0]);
            readout(g, y)
        });
        assert!(r.max_rel_err < 1e-4, "inputs: {r:?}");
        let r = check_param_gradients(&store, 1e-6, 1, |g, st| {
            let xv = g.constant(x.clone());
            let y = enc.forward_var(g, st, &pillars, xv);
            readout(g, y)
        });
        assert!(r.max_rel_err < 1e-4, "params: {r:?}");
    }

    proptest! {
        #[test]
        fn point_order_does_not_matter(
            pts in prop::collection::vec((0.0f32..4.0, -2.0f32..2.0, -1.0f32..1.0, -5.0f32..5.0), 1..11),
            seed in any::<u64>(),
        ) {
            let (store, enc) = encoder(small_grid(), 5);
            let a: Vec<[f32; 4]> = pts.iter().map(|p| [p.0, p.1, p.2, p.3]).collect();
            let mut b = a.clone();
            rand::seq::SliceRandom::shuffle(b.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let (ya, yb) = (encode(&store, &enc, &lidar_cloud(&a)), encode(&store, &enc, &lidar_cloud(&b)));
            prop_assert!(ya.max_abs_diff(&yb) < 1e-9);
        }

        #[test]
        fn nonzero_cells_are_the_occupied_pillars(
            pts in prop::collection::vec((-1.0f32..5.0, -3.0f32..3.0, -1.0f32..1.0, -5.0f32..5.0), 0..30),
        ) {
            let (store, enc) = encoder(small_grid(), 6);
            let a: Vec<[f32; 4]> = pts.iter().map(|p| [p.0, p.1, p.2, p.3]).collect();
            let pillars = pillarize(&lidar_cloud(&a), &enc.grid);
            let y = encode(&store, &enc, &lidar_cloud(&a));
            let nonzero = y.data().chunks(4).filter(|c| c.iter().any(|v| *v != 0.0)).count();
            prop_assert_eq!(nonzero, pillars.len());
            let occ = occupancy(&pillars, &enc.grid);
            prop_assert_eq!(occ.iter().filter(|o| **o).count(), pillars.len());
        }
    }
}
