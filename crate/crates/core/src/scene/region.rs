use serde::{Deserialize, Serialize};

use super::Box3D;
use crate::error::{Error, Result};

/// Depth bucket edges 0-10, 10-20, 20-30, 30-40, 40-50, 50+ (meters).
pub const TABLE_DEPTH_EDGES: [f64; 6] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionName {
    Eaa,
    Dca,
    Custom(String),
}

impl RegionName {
    pub fn label(&self) -> &str {
        match self {
            RegionName::Eaa => "EAA",
            RegionName::Dca => "DCA",
            RegionName::Custom(s) => s,
        }
    }
}

/// Evaluation region: a lateral band and a longitudinal interval
/// `[min, max)` in the sensor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: RegionName,
    #[serde(with = "unbounded")]
    pub lateral_bound: f64,
    #[serde(with = "unbounded_pair")]
    pub longitudinal_range: (f64, f64),
}

/// Infinite bounds as `"inf"` / `"-inf"`; JSON has no literal for them.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else {
            Repr::Text(if v > 0.0 { "inf" } else { "-inf" }.into())
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("expected a number, \"inf\" or \"-inf\", got {s:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod unbounded_pair {
    use super::unbounded::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        (to_repr(v.0), to_repr(v.1)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (a, b) = <(Repr, Repr)>::deserialize(d)?;
        Ok((from_repr(a)?, from_repr(b)?))
    }
}

impl RegionSpec {
    /// Entire annotated area; keeps every box.
    pub fn eaa() -> RegionSpec {
        RegionSpec {
            name: RegionName::Eaa,
            lateral_bound: f64::INFINITY,
            longitudinal_range: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Driving corridor: |y| < 4 m, 0 <= x < 25 m.
    pub fn dca() -> RegionSpec {
        RegionSpec {
            name: RegionName::Dca,
            lateral_bound: 4.0,
            longitudinal_range: (0.0, 25.0),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        lateral_bound: f64,
        longitudinal_range: (f64, f64),
    ) -> Result<RegionSpec> {
        let spec = RegionSpec {
            name: RegionName::Custom(name.into()),
            lateral_bound,
            longitudinal_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lateral_bound > 0.0) {
            return Err(Error::invalid("region lateral bound must be positive"));
        }
        let (lo, hi) = self.longitudinal_range;
        if !(lo < hi) {
            return Err(Error::invalid(format!(
                "region longitudinal range must satisfy min < max, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        if self.name == RegionName::Eaa {
            return true;
        }
        let (lo, hi) = self.longitudinal_range;
        y.abs() < self.lateral_bound && x >= lo && x < hi
    }

    pub fn contains(&self, b: &Box3D) -> bool {
        self.contains_xy(b.x, b.y)
    }
}

/// Keep the boxes whose centers fall inside `region`, preserving order.
pub fn filter_boxes_by_region(boxes: &[Box3D], region: &RegionSpec) -> Vec<Box3D> {
    boxes.iter().filter(|b| region.contains(b)).copied().collect()
}

/// Index of the half-open bucket `[e_i, e_{i+1})` containing the box depth;
/// the last bucket is open-ended.
pub fn depth_bucket(b: &Box3D, edges: &[f64]) -> Result<usize> {
    depth_bucket_of(b.depth(), edges)
}

pub(crate) fn depth_bucket_of(depth: f64, edges: &[f64]) -> Result<usize> {
    if edges.is_empty() {
        return Err(Error::invalid("depth edges must not be empty"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("depth edges must be strictly increasing"));
    }
    if !depth.is_finite() || depth < 0.0 {
        return Err(Error::invalid(format!("negative or non-finite depth {depth}")));
    }
    if depth < edges[0] {
        return Err(Error::invalid(format!(
            "depth {depth} below first bucket edge {}",
            edges[0]
        )));
    }
    Ok(edges.partition_point(|&e| e <= depth) - 1)
}
