//! Domain types for referring samples: oriented boxes, point clouds, and
//! the evaluation regions used to stratify results.

mod io;
mod region;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{list_sample_ids, load_sample, write_sample, DatasetReader, DatasetWriter, PromptEntry};
pub use region::{
    depth_bucket, filter_boxes_by_region, RegionName, RegionSpec, TABLE_DEPTH_EDGES,
};
pub(crate) use region::{
    depth_bucket_of,
};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassId {
    Car,
    Pedestrian,
    Cyclist,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            ClassId::Car => 0,
            ClassId::Pedestrian => 1,
            ClassId::Cyclist => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<ClassId> {
        ClassId::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Car => "Car",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Cyclist => "Cyclist",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ClassId::Car),
            "pedestrian" => Ok(ClassId::Pedestrian),
            "cyclist" => Ok(ClassId::Cyclist),
            other => Err(Error::invalid(format!("unknown class {other:?}"))),
        }
    }
}

/// Oriented 3D box in the sensor frame (x forward, y left, z up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class: ClassId,
}

impl Box3D {
    /// Validating constructor; the yaw is wrapped into `(-pi, pi]`.
    pub fn new(
        class: ClassId,
        center: [f64; 3],
        dims: [f64; 3],
        yaw: f64,
    ) -> Result<Box3D> {
        let [x, y, z] = center;
        let [l, w, h] = dims;
        if !(center.iter().chain(dims.iter()).all(|v| v.is_finite()) && yaw.is_finite()) {
            return Err(Error::invalid("box has non-finite values"));
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!(
                "box dimensions must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Box3D {
            x,
            y,
            z,
            l,
            w,
            h,
            yaw: normalize_angle(yaw),
            class,
        })
    }

    /// Distance along the sensor forward axis.
    pub fn depth(&self) -> f64 {
        self.x
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 2]; 4];
        for (o, [lx, ly]) in out.iter_mut().zip(local) {
            *o = [self.x + c * lx - s * ly, self.y + s * lx + c * ly];
        }
        out
    }

    /// Whether a point lies inside the box (boundary inclusive).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let eps = 1e-9;
        lx.abs() <= self.l / 2.0 + eps
            && ly.abs() <= self.w / 2.0 + eps
            && (p[2] - self.z).abs() <= self.h / 2.0 + eps
    }
}

/// Which point cloud feeds the model. `RadarN` denotes N accumulated scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Radar1,
    Radar3,
    Radar5,
    Lidar,
}

impl Sensor {
    pub fn frames(self) -> usize {
        match self {
            Sensor::Radar1 | Sensor::Lidar => 1,
            Sensor::Radar3 => 3,
            Sensor::Radar5 => 5,
        }
    }

    pub fn is_lidar(self) -> bool {
        self == Sensor::Lidar
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Radar1 => "radar1",
            Sensor::Radar3 => "radar3",
            Sensor::Radar5 => "radar5",
            Sensor::Lidar => "lidar",
        }
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radar1" => Ok(Sensor::Radar1),
            "radar3" => Ok(Sensor::Radar3),
            "radar5" => Ok(Sensor::Radar5),
            "lidar" => Ok(Sensor::Lidar),
            other => Err(Error::invalid(format!("unknown sensor {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub unit: String,
}

/// Ordered per-point field names with units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSchema {
    pub fields: Vec<FieldSpec>,
}

impl PointSchema {
    pub fn new(fields: &[(&str, &str)]) -> PointSchema {
        PointSchema {
            fields: fields
                .iter()
                .map(|(n, u)| FieldSpec {
                    name: (*n).to_string(),
                    unit: (*u).to_string(),
                })
                .collect(),
        }
    }

    /// x, y, z, rcs, v_r, v_r_comp, t
    pub fn radar() -> PointSchema {
        PointSchema::new(&[
            ("x", "m"),
            ("y", "m"),
            ("z", "m"),
            ("rcs", "dBsm"),
            ("v_r", "m/s"),
            ("v_r_comp", "m/s"),
            ("t", "s"),
        ])
    }

    pub fn lidar() -> PointSchema {
        PointSchema::new(&[("x", "m"), ("y", "m"), ("z", "m"), ("intensity", "")])
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// Row-major point records; every record has `schema.len()` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    schema: PointSchema,
    data: Vec<f32>,
}

impl PointCloud {
    pub fn new(schema: PointSchema, data: Vec<f32>) -> Result<PointCloud> {
        let dim = schema.len();
        if dim < 3 {
            return Err(Error::invalid("point schema needs at least x, y, z"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "point buffer of {} values is not a multiple of record length {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in point {} field {}",
                i / dim,
                i % dim
            )));
        }
        Ok(PointCloud { schema, data })
    }

    pub fn empty(schema: PointSchema) -> PointCloud {
        PointCloud {
            schema,
            data: Vec::new(),
        }
    }

    pub fn schema(&self) -> &PointSchema {
        &self.schema
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Camera frame carried through untouched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraPayload {
    pub extension: String,
    pub bytes: Vec<u8>,
}

/// One prompt with its point clouds and annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferringSample {
    pub sample_id: String,
    pub radar: PointCloud,
    pub lidar: Option<PointCloud>,
    pub camera: Option<CameraPayload>,
    pub prompt: String,
    /// Full scene annotation.
    pub all_boxes: Vec<Box3D>,
    /// Indices into `all_boxes` of the objects the prompt refers to.
    pub referred: Vec<usize>,
}

impl ReferringSample {
    pub fn validate(&self) -> Result<()> {
        if self.referred.is_empty() {
            return Err(Error::Validation(format!(
                "sample {}: no referred boxes",
                self.sample_id
            )));
        }
        let mut seen = vec![false; self.all_boxes.len()];
        for &i in &self.referred {
            match seen.get_mut(i) {
                None => {
                    return Err(Error::Validation(format!(
                        "sample {}: referred index {i} outside {} annotated boxes",
                        self.sample_id,
                        self.all_boxes.len()
                    )))
                }
                Some(s) if *s => {
                    return Err(Error::Validation(format!(
                        "sample {}: referred index {i} repeated",
                        self.sample_id
                    )))
                }
                Some(s) => *s = true,
            }
        }
        Ok(())
    }

    pub fn referred_boxes(&self) -> Vec<Box3D> {
        self.referred.iter().map(|&i| self.all_boxes[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap_by_steps(mut a: f64) -> f64 {
        while a > PI {
            a -= 2.0 * PI;
        }
        while a <= -PI {
            a += 2.0 * PI;
        }
        a
    }

    #[test]
    fn angle_normalization_matches_stepwise_oracle() {
        assert!((normalize_angle(1.5 * PI) - (-0.5 * PI)).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(PI), PI);
        for k in -40..=40 {
            let a = k as f64 * 0.37;
            assert!((normalize_angle(a) - wrap_by_steps(a)).abs() < 1e-9, "{a}");
        }
    }

    #[test]
    fn box_rejects_bad_dims() {
        assert!(Box3D::new(ClassId::Car, [0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
        assert!(Box3D::new(ClassId::Car, [f64::NAN, 0.0, 0.0], [1.0; 3], 0.0).is_err());
    }

    #[test]
    fn point_cloud_record_length() {
        assert!(PointCloud::new(PointSchema::radar(), vec![0.0; 13]).is_err());
        let pc = PointCloud::new(PointSchema::radar(), vec![1.0; 14]).unwrap();
        assert_eq!(pc.len(), 2);
        assert!(PointCloud::new(PointSchema::lidar(), vec![f32::INFINITY; 4]).is_err());
    }

    #[test]
    fn contains_respects_rotation() {
        let b = Box3D::new(ClassId::Car, [0.0, 0.0, 0.0], [4.0, 1.0, 1.0], PI / 2.0).unwrap();
        assert!(b.contains([0.0, 1.9, 0.0]));
        assert!(!b.contains([1.9, 0.0, 0.0]));
    }
}
