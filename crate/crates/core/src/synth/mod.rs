//! Deterministic synthetic radar scenes with template prompts.
//!
//! Every scene is a pure function of `(config, scene_index)`: the scene RNG
//! is a ChaCha stream keyed by the config seed and selected by the index,
//! so scenes can be generated in any order or in parallel.

mod predicate;
mod templates;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rotated_iou_bev;
use crate::scene::{
    Box3D, ClassId, DatasetWriter, PointCloud, PointSchema, ReferringSample, Sensor,
};

pub use predicate::{
    evaluate_predicate, radial_speed, Comparator, Motion, Predicate, Rank, Side,
};
pub use templates::{predicate_for, render, Operands, TemplateKind, IMPLIED_MOTION_SPEED};

/// Predicate operands are resampled at most this many times.
pub const MAX_PREDICATE_RETRIES: usize = 16;
const MAX_PLACEMENT_ATTEMPTS: usize = 200;
const FRAME_INTERVAL_S: f64 = 0.1;
const STATIONARY_PROBABILITY: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub objects_per_scene: (usize, usize),
    pub classes_enabled: Vec<ClassId>,
    /// Longitudinal (x) extent in meters.
    pub extent_x: (f64, f64),
    /// Lateral (y) extent in meters.
    pub extent_y: (f64, f64),
    pub points_per_object: (usize, usize),
    pub clutter_points: (usize, usize),
    /// Object speed range in m/s, before the per-class scale.
    pub velocity_range: (f64, f64),
    /// RCS mean and standard deviation (dBsm) per class.
    pub rcs_by_class: BTreeMap<ClassId, (f64, f64)>,
    pub clutter_rcs: (f64, f64),
    /// Uniform noise bound on measured radial velocity, m/s.
    pub velocity_noise: f64,
    pub template_set: Vec<TemplateKind>,
    /// Guarantee a same-class distractor that differs from the referent
    /// only in velocity or position.
    pub distractor: bool,
    /// Headings along the x axis (either direction) instead of uniform.
    pub road_aligned: bool,
    /// Uniform heading jitter bound for road-aligned boxes, radians.
    pub yaw_jitter: f64,
    pub sensor: Sensor,
    /// Also synthesize a denser LiDAR cloud.
    pub with_lidar: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut rcs = BTreeMap::new();
        rcs.insert(ClassId::Car, (10.0, 4.0));
        rcs.insert(ClassId::Pedestrian, (-5.0, 3.0));
        rcs.insert(ClassId::Cyclist, (0.0, 3.0));
        SynthConfig {
            n_scenes: 100,
            objects_per_scene: (2, 5),
            classes_enabled: ClassId::ALL.to_vec(),
            extent_x: (0.0, 15.36),
            extent_y: (-7.68, 7.68),
            points_per_object: (8, 20),
            clutter_points: (10, 30),
            velocity_range: (0.0, 8.0),
            rcs_by_class: rcs,
            clutter_rcs: (-15.0, 3.0),
            velocity_noise: 0.05,
            template_set: TemplateKind::ALL.to_vec(),
            distractor: false,
            road_aligned: false,
            yaw_jitter: 0.2,
            sensor: Sensor::Radar1,
            with_lidar: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_scenes == 0 {
            return bad("n_scenes must be positive");
        }
        for (name, (lo, hi)) in [
            ("objects_per_scene", self.objects_per_scene),
            ("points_per_object", self.points_per_object),
            ("clutter_points", self.clutter_points),
        ] {
            if lo > hi {
                return bad(&format!("{name} min exceeds max"));
            }
        }
        if self.objects_per_scene.0 == 0 {
            return bad("objects_per_scene min must be at least 1");
        }
        for (name, (lo, hi)) in [
            ("extent_x", self.extent_x),
            ("extent_y", self.extent_y),
            ("velocity_range", self.velocity_range),
        ] {
            if !(lo <= hi) {
                return bad(&format!("{name} min exceeds max"));
            }
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.yaw_jitter) {
            return bad("yaw_jitter must lie in [0, pi/2]");
        }
        if self.velocity_range.0 < 0.0 || self.velocity_noise < 0.0 {
            return bad("speeds and noise bounds must be non-negative");
        }
        if self.classes_enabled.is_empty() {
            return bad("classes_enabled is empty");
        }
        if self.template_set.is_empty() {
            return bad("template_set is empty");
        }
        if self.distractor {
            if let Some(k) = self.template_set.iter().find(|k| !k.supports_distractor()) {
                return bad(&format!(
                    "template {k:?} cannot be disambiguated by a distractor"
                ));
            }
            if self.velocity_range.1 < IMPLIED_MOTION_SPEED + 1.0 {
                return bad("distractor scenes need velocity_range max >= 1.5 m/s");
            }
        }
        for c in &self.classes_enabled {
            if !self.rcs_by_class.contains_key(c) {
                return bad(&format!("rcs_by_class has no entry for {c}"));
            }
        }
        Ok(())
    }
}

/// A generated sample plus the hidden state the prompt was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub sample: ReferringSample,
    /// BEV velocity per annotated box, m/s.
    pub velocities: Vec<[f64; 2]>,
    pub predicate: Predicate,
    pub template: TemplateKind,
}

fn class_dims(class: ClassId) -> [f64; 3] {
    match class {
        ClassId::Car => [4.2, 1.8, 1.5],
        ClassId::Pedestrian => [0.7, 0.6, 1.7],
        ClassId::Cyclist => [1.8, 0.7, 1.6],
    }
}

fn class_speed_scale(class: ClassId) -> f64 {
    match class {
        ClassId::Car => 1.0,
        ClassId::Cyclist => 0.6,
        ClassId::Pedestrian => 0.25,
    }
}

pub fn scene_rng(seed: u64, scene_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_index);
    rng
}

struct Object {
    bbox: Box3D,
    velocity: [f64; 2],
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SynthConfig, class: ClassId) -> Box3D {
    let base = class_dims(class);
    let dims = base.map(|d| d * rng.random_range(0.95..1.05));
    let margin = dims[0].max(dims[1]) / 2.0 + 0.1;
    let x = sample_range(rng, cfg.extent_x.0 + margin, cfg.extent_x.1 - margin);
    let y = sample_range(rng, cfg.extent_y.0 + margin, cfg.extent_y.1 - margin);
    let yaw = if cfg.road_aligned {
        let flip = if rng.random::<bool>() { std::f64::consts::PI } else { 0.0 };
        crate::scene::normalize_angle(flip + sample_range(rng, -cfg.yaw_jitter, cfg.yaw_jitter))
    } else {
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
    };
    Box3D::new(class, [x, y, dims[2] / 2.0], dims, yaw).expect("positive dims")
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        (lo + hi) / 2.0
    }
}

fn random_velocity(rng: &mut ChaCha8Rng, cfg: &SynthConfig, class: ClassId) -> [f64; 2] {
    if rng.random::<f64>() < STATIONARY_PROBABILITY {
        return [0.0, 0.0];
    }
    let speed = sample_range(rng, cfg.velocity_range.0, cfg.velocity_range.1)
        * class_speed_scale(class);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    [speed * heading.cos(), speed * heading.sin()]
}

fn overlaps(b: &Box3D, placed: &[Object]) -> bool {
    placed.iter().any(|o| rotated_iou_bev(b, &o.bbox) > 0.0)
}

fn fits(b: &Box3D, cfg: &SynthConfig) -> bool {
    b.bev_corners().iter().all(|c| {
        c[0] >= cfg.extent_x.0 && c[0] < cfg.extent_x.1 && c[1] >= cfg.extent_y.0 && c[1] < cfg.extent_y.1
    })
}

fn place(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    class: ClassId,
    placed: &[Object],
) -> Option<Box3D> {
    (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| {
        let b = random_box(rng, cfg, class);
        (!overlaps(&b, placed)).then_some(b)
    })
}

/// Velocity with speed in `[lo, hi]` pointing within 30 degrees of the
/// line of sight, toward or away from the sensor.
fn directed_velocity(rng: &mut ChaCha8Rng, b: &Box3D, direction: Motion, lo: f64, hi: f64) -> [f64; 2] {
    let r = b.x.hypot(b.y).max(1e-6);
    let los = [b.x / r, b.y / r];
    let sign = match direction {
        Motion::Toward => -1.0,
        Motion::Away => 1.0,
    };
    let speed = sample_range(rng, lo, hi.max(lo));
    let off = rng.random_range(-0.52..0.52f64);
    let (s, c) = off.sin_cos();
    let dir = [c * los[0] - s * los[1], s * los[0] + c * los[1]];
    [sign * speed * dir[0], sign * speed * dir[1]]
}

fn place_distractor_pair(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    template: TemplateKind,
    class: ClassId,
) -> Option<Vec<Object>> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let target = random_box(rng, cfg, class);
        match template {
            TemplateKind::Toward | TemplateKind::Away => {
                let (mine, other) = if template == TemplateKind::Toward {
                    (Motion::Toward, Motion::Away)
                } else {
                    (Motion::Away, Motion::Toward)
                };
                let first = Object {
                    velocity: directed_velocity(rng, &target, mine, IMPLIED_MOTION_SPEED + 1.0, cfg.velocity_range.1),
                    bbox: target,
                };
                let mut twin = random_box(rng, cfg, class);
                twin.l = target.l;
                twin.w = target.w;
                twin.h = target.h;
                twin.z = target.z;
                if overlaps(&twin, std::slice::from_ref(&first)) || !fits(&twin, cfg) {
                    continue;
                }
                let second = Object {
                    velocity: directed_velocity(rng, &twin, other, IMPLIED_MOTION_SPEED + 1.0, cfg.velocity_range.1),
                    bbox: twin,
                };
                return Some(vec![first, second]);
            }
            TemplateKind::Left | TemplateKind::Right => {
                let want_left = template == TemplateKind::Left;
                let mut t = target;
                if (t.y > 0.0) != want_left {
                    t.y = -t.y;
                }
                let mut twin = t;
                twin.y = -t.y;
                twin.yaw = crate::scene::normalize_angle(-t.yaw);
                if t.y.abs() < 0.5 || !fits(&t, cfg) || !fits(&twin, cfg) {
                    continue;
                }
                let velocity = random_velocity(rng, cfg, class);
                let first = Object { bbox: t, velocity };
                if overlaps(&twin, std::slice::from_ref(&first)) {
                    continue;
                }
                return Some(vec![
                    first,
                    Object {
                        bbox: twin,
                        velocity,
                    },
                ]);
            }
            _ => return None,
        }
    }
    None
}

fn floor_half(v: f64) -> f64 {
    (v * 2.0).floor() / 2.0
}

fn ceil_half(v: f64) -> f64 {
    (v * 2.0).ceil() / 2.0
}

fn speed_cap(cfg: &SynthConfig, class: ClassId) -> f64 {
    cfg.velocity_range.1 * class_speed_scale(class)
}

/// Adjust the first object so the template has at least one candidate
/// referent, staying within the configured speed range. Leaves the object
/// untouched when that is impossible; the operand retries then decide.
fn anchor_first(rng: &mut ChaCha8Rng, cfg: &SynthConfig, kind: TemplateKind, objects: &mut [Object]) {
    let (first, rest) = objects.split_first_mut().expect("non-empty");
    let class = first.bbox.class;
    let cap = speed_cap(cfg, class);
    match kind {
        TemplateKind::Toward
        | TemplateKind::Away
        | TemplateKind::TowardFaster
        | TemplateKind::AwayFaster => {
            let dir = match kind {
                TemplateKind::Toward | TemplateKind::TowardFaster => Motion::Toward,
                _ => Motion::Away,
            };
            // Radial part stays above 0.866 * speed (30 degree cone).
            let lo = (IMPLIED_MOTION_SPEED + 0.25) / 0.866;
            if cap >= lo {
                first.velocity = directed_velocity(rng, &first.bbox, dir, lo, cap);
            }
        }
        TemplateKind::Faster => {
            if first.velocity[0].hypot(first.velocity[1]) <= 0.5 && cap > 1.0 {
                let speed = sample_range(rng, 1.0, cap);
                let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                first.velocity = [speed * heading.cos(), speed * heading.sin()];
            }
        }
        TemplateKind::Left | TemplateKind::Right => {
            let want_left = kind == TemplateKind::Left;
            if (first.bbox.y > 0.0) != want_left {
                let mut flipped = first.bbox;
                flipped.y = -flipped.y;
                if flipped.y != 0.0
                    && fits(&flipped, cfg)
                    && rest.iter().all(|o| rotated_iou_bev(&flipped, &o.bbox) == 0.0)
                {
                    first.bbox = flipped;
                }
            }
        }
        _ => {}
    }
}

/// Operands drawn so that `anchor` satisfies the predicate whenever its
/// attributes allow it.
fn sample_operands(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    kind: TemplateKind,
    anchor: &Object,
) -> Operands {
    let mut ops = Operands::default();
    let radial = radial_speed(&anchor.bbox, anchor.velocity);
    let speed = anchor.velocity[0].hypot(anchor.velocity[1]);
    let hi = speed_cap(cfg, anchor.bbox.class).max(1.0);
    match kind {
        TemplateKind::TowardFaster | TemplateKind::AwayFaster | TemplateKind::Faster => {
            let value = match kind {
                TemplateKind::TowardFaster => -radial,
                TemplateKind::AwayFaster => radial,
                _ => speed,
            };
            ops.speed = if value > 0.5 {
                floor_half(rng.random_range(0.5..value))
            } else {
                floor_half(rng.random_range(0.5..=hi))
            }
            .max(0.5);
        }
        TemplateKind::Slower => {
            ops.speed = ceil_half(speed + rng.random_range(0.01..3.0)).max(0.5);
        }
        TemplateKind::DepthBetween => {
            let x = anchor.bbox.depth().max(0.0);
            let width = if rng.random::<bool>() { 5.0 } else { 10.0 };
            let mut lo = (x / 5.0).floor() * 5.0;
            if width > 5.0 && lo >= 5.0 && rng.random::<bool>() {
                lo -= 5.0;
            }
            ops.depth_min = lo;
            ops.depth_max = lo + width;
        }
        TemplateKind::CloserThan => {
            let x = anchor.bbox.depth().max(0.0);
            ops.depth_min = 0.0;
            ops.depth_max = ((x / 5.0).floor() + 1.0 + f64::from(rng.random_range(0..2u8))) * 5.0;
        }
        _ => {}
    }
    ops
}

struct CloudBuilder {
    data: Vec<f32>,
}

impl CloudBuilder {
    fn push(&mut self, values: &[f64]) {
        self.data.extend(values.iter().map(|&v| v as f32));
    }
}

fn sample_in_box(rng: &mut ChaCha8Rng, b: &Box3D) -> [f64; 3] {
    let lx = rng.random_range(-0.5..0.5) * b.l;
    let ly = rng.random_range(-0.5..0.5) * b.w;
    let lz = rng.random_range(-0.5..0.5) * b.h;
    let (s, c) = b.yaw.sin_cos();
    [b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + lz]
}

fn build_radar(rng: &mut ChaCha8Rng, cfg: &SynthConfig, objects: &[Object]) -> Result<PointCloud> {
    let mut cloud = CloudBuilder { data: Vec::new() };
    for frame in 0..cfg.sensor.frames() {
        let t = -(frame as f64) * FRAME_INTERVAL_S;
        for o in objects {
            let (mean, std) = cfg.rcs_by_class[&o.bbox.class];
            let rcs = Normal::new(mean, std.max(1e-9)).expect("valid normal");
            let n = rng.random_range(cfg.points_per_object.0..=cfg.points_per_object.1);
            for _ in 0..n {
                let mut p = sample_in_box(rng, &o.bbox);
                // Earlier scans saw the object where it was `t` seconds ago.
                p[0] += o.velocity[0] * t;
                p[1] += o.velocity[1] * t;
                let range = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-6);
                let radial = (o.velocity[0] * p[0] + o.velocity[1] * p[1]) / range;
                let noise = if cfg.velocity_noise > 0.0 {
                    rng.random_range(-cfg.velocity_noise..=cfg.velocity_noise)
                } else {
                    0.0
                };
                let v = radial + noise;
                cloud.push(&[p[0], p[1], p[2], rcs.sample(rng), v, v, t]);
            }
        }
        let clutter_rcs = Normal::new(cfg.clutter_rcs.0, cfg.clutter_rcs.1.max(1e-9))
            .expect("valid normal");
        let n = rng.random_range(cfg.clutter_points.0..=cfg.clutter_points.1);
        for _ in 0..n {
            let p = [
                sample_range(rng, cfg.extent_x.0, cfg.extent_x.1),
                sample_range(rng, cfg.extent_y.0, cfg.extent_y.1),
                rng.random_range(-0.5..2.5),
            ];
            let rcs = clutter_rcs.sample(rng);
            if objects.iter().any(|o| o.bbox.contains(p)) {
                continue;
            }
            cloud.push(&[p[0], p[1], p[2], rcs, 0.0, 0.0, t]);
        }
    }
    PointCloud::new(PointSchema::radar(), cloud.data)
}

fn build_lidar(rng: &mut ChaCha8Rng, cfg: &SynthConfig, objects: &[Object]) -> Result<PointCloud> {
    let mut cloud = CloudBuilder { data: Vec::new() };
    for o in objects {
        for _ in 0..cfg.points_per_object.1 * 4 {
            let p = sample_in_box(rng, &o.bbox);
            cloud.push(&[p[0], p[1], p[2], rng.random::<f64>()]);
        }
    }
    for _ in 0..cfg.clutter_points.1 * 4 {
        let p = [
            sample_range(rng, cfg.extent_x.0, cfg.extent_x.1),
            sample_range(rng, cfg.extent_y.0, cfg.extent_y.1),
            0.0,
        ];
        cloud.push(&[p[0], p[1], p[2], rng.random::<f64>() * 0.2]);
    }
    PointCloud::new(PointSchema::lidar(), cloud.data)
}

pub fn sample_id_for(scene_index: u64) -> String {
    format!("{scene_index:06}")
}

/// Generate one scene with its hidden velocities and predicate.
pub fn generate_scene_detailed(cfg: &SynthConfig, scene_index: u64) -> Result<GeneratedScene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, scene_index);
    let exhausted = || Error::GenerationRetryExhausted {
        scene_index,
        attempts: MAX_PREDICATE_RETRIES,
    };

    let n_objects = rng.random_range(cfg.objects_per_scene.0..=cfg.objects_per_scene.1);
    let template = *cfg.template_set.choose(&mut rng).expect("non-empty");
    let mut objects: Vec<Object> = Vec::with_capacity(n_objects);
    let mut prompt_class = None;

    if cfg.distractor {
        let class = *cfg.classes_enabled.choose(&mut rng).expect("non-empty");
        let pair = place_distractor_pair(&mut rng, cfg, template, class).ok_or_else(exhausted)?;
        objects.extend(pair);
        prompt_class = Some(class);
    }
    while objects.len() < n_objects {
        let class = *cfg.classes_enabled.choose(&mut rng).expect("non-empty");
        match place(&mut rng, cfg, class, &objects) {
            Some(bbox) => {
                let velocity = random_velocity(&mut rng, cfg, class);
                objects.push(Object { bbox, velocity });
            }
            None => break,
        }
    }
    if objects.is_empty() {
        return Err(exhausted());
    }
    if !cfg.distractor {
        anchor_first(&mut rng, cfg, template, &mut objects);
    }
    let anchor_box = objects[0].bbox;
    objects.shuffle(&mut rng);

    let boxes: Vec<Box3D> = objects.iter().map(|o| o.bbox).collect();
    let velocities: Vec<[f64; 2]> = objects.iter().map(|o| o.velocity).collect();

    let mut chosen = None;
    for attempt in 0..MAX_PREDICATE_RETRIES {
        // The first attempt describes the anchor; later ones any object.
        let anchor = if attempt == 0 {
            objects.iter().find(|o| o.bbox == anchor_box).expect("anchor kept")
        } else {
            objects.choose(&mut rng).expect("non-empty")
        };
        let class = prompt_class.unwrap_or(anchor.bbox.class);
        let ops = sample_operands(&mut rng, cfg, template, anchor);
        let pred = predicate_for(template, class, ops);
        let referred = evaluate_predicate(&pred, &boxes, &velocities)?;
        if !referred.is_empty() {
            chosen = Some((pred, referred, class, ops));
            break;
        }
    }
    let (predicate, referred, class, ops) = chosen.ok_or_else(exhausted)?;

    let radar = build_radar(&mut rng, cfg, &objects)?;
    let lidar = if cfg.with_lidar || cfg.sensor.is_lidar() {
        Some(build_lidar(&mut rng, cfg, &objects)?)
    } else {
        None
    };
    let prompt = render(template, class, ops, referred.len() > 1);
    let sample = ReferringSample {
        sample_id: sample_id_for(scene_index),
        radar,
        lidar,
        camera: None,
        prompt,
        all_boxes: boxes,
        referred,
    };
    sample.validate()?;
    Ok(GeneratedScene {
        sample,
        velocities,
        predicate,
        template,
    })
}

pub fn generate_scene(cfg: &SynthConfig, scene_index: u64) -> Result<ReferringSample> {
    generate_scene_detailed(cfg, scene_index).map(|g| g.sample)
}

/// Generate scenes `offset..offset + cfg.n_scenes` in memory.
pub fn generate_samples(cfg: &SynthConfig, offset: u64) -> Result<Vec<ReferringSample>> {
    (0..cfg.n_scenes as u64)
        .map(|i| generate_scene(cfg, offset + i))
        .collect()
}

/// Write `cfg.n_scenes` scenes in the dataset layout; returns the ids.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    generate_dataset_from(cfg, 0, out_dir)
}

/// Like [`generate_dataset`], starting at scene index `offset`. The
/// harness places validation scenes after the training ones.
pub fn generate_dataset_from(cfg: &SynthConfig, offset: u64, out_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut writer = DatasetWriter::open(out_dir)?;
    let mut ids = Vec::with_capacity(cfg.n_scenes);
    for i in 0..cfg.n_scenes as u64 {
        let s = generate_scene(cfg, offset + i)?;
        writer.write(&s)?;
        ids.push(s.sample_id);
    }
    writer.finish()?;
    Ok(ids)
}
