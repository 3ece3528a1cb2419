use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Box3D, ClassId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Closing in on the sensor (negative radial velocity).
    Toward,
    Away,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Positive y.
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    Largest,
    Smallest,
}

/// Attribute test over annotated objects. `All` is a conjunction: plain
/// terms filter, then at most one `SizeRank` term picks from the survivors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attribute", rename_all = "snake_case")]
pub enum Predicate {
    Class { class: ClassId },
    VelocityMagnitude { comparator: Comparator, speed: f64 },
    MotionDirection { direction: Motion, min_speed: f64 },
    DepthRange { min: f64, max: f64 },
    LateralSide { side: Side },
    SizeRank { rank: Rank },
    All { terms: Vec<Predicate> },
}

/// Radial velocity of an object at `b` moving with `v`, positive when
/// receding from the sensor origin.
pub fn radial_speed(b: &Box3D, v: [f64; 2]) -> f64 {
    let r = b.x.hypot(b.y);
    if r == 0.0 {
        return 0.0;
    }
    (v[0] * b.x + v[1] * b.y) / r
}

impl Predicate {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPredicate(m));
        match self {
            Predicate::VelocityMagnitude { speed, .. } if !(speed.is_finite() && *speed >= 0.0) => {
                bad(format!("velocity_magnitude needs a finite speed >= 0 m/s, got {speed}"))
            }
            Predicate::MotionDirection { min_speed, .. }
                if !(min_speed.is_finite() && *min_speed >= 0.0) =>
            {
                bad(format!("motion_direction needs min_speed >= 0 m/s, got {min_speed}"))
            }
            Predicate::DepthRange { min, max } if !(min <= max) || min.is_nan() => {
                bad(format!("depth_range needs min <= max, got [{min}, {max}]"))
            }
            Predicate::All { terms } => {
                if terms.is_empty() {
                    return bad("empty conjunction".into());
                }
                let ranks = terms
                    .iter()
                    .filter(|t| matches!(t, Predicate::SizeRank { .. }))
                    .count();
                if ranks > 1 {
                    return bad("at most one size_rank term per conjunction".into());
                }
                for t in terms {
                    if matches!(t, Predicate::All { .. }) {
                        return bad("nested conjunctions are not supported".into());
                    }
                    t.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn test(&self, b: &Box3D, v: [f64; 2]) -> bool {
        match *self {
            Predicate::Class { class } => b.class == class,
            Predicate::VelocityMagnitude { comparator, speed } => {
                let s = v[0].hypot(v[1]);
                match comparator {
                    Comparator::Greater => s > speed,
                    Comparator::Less => s < speed,
                }
            }
            Predicate::MotionDirection {
                direction,
                min_speed,
            } => {
                let r = radial_speed(b, v);
                match direction {
                    Motion::Toward => r < -min_speed,
                    Motion::Away => r > min_speed,
                }
            }
            Predicate::DepthRange { min, max } => b.depth() >= min && b.depth() <= max,
            Predicate::LateralSide { side } => match side {
                Side::Left => b.y > 0.0,
                Side::Right => b.y < 0.0,
            },
            Predicate::SizeRank { .. } | Predicate::All { .. } => {
                unreachable!("handled by evaluate_predicate")
            }
        }
    }
}

fn pick_rank(rank: Rank, candidates: &[usize], boxes: &[Box3D]) -> Vec<usize> {
    let mut best: Option<usize> = None;
    for &i in candidates {
        let better = match best {
            None => true,
            Some(j) => match rank {
                Rank::Largest => boxes[i].volume() > boxes[j].volume(),
                Rank::Smallest => boxes[i].volume() < boxes[j].volume(),
            },
        };
        if better {
            best = Some(i);
        }
    }
    best.into_iter().collect()
}

/// Indices (ascending) of the objects satisfying `pred`. Rank ties go to
/// the lowest index.
pub fn evaluate_predicate(
    pred: &Predicate,
    boxes: &[Box3D],
    velocities: &[[f64; 2]],
) -> Result<Vec<usize>> {
    if boxes.len() != velocities.len() {
        return Err(Error::invalid(format!(
            "{} boxes but {} velocities",
            boxes.len(),
            velocities.len()
        )));
    }
    pred.validate()?;
    let all: Vec<usize> = (0..boxes.len()).collect();
    let (filters, rank): (Vec<&Predicate>, Option<Rank>) = match pred {
        Predicate::All { terms } => {
            let rank = terms.iter().find_map(|t| match t {
                Predicate::SizeRank { rank } => Some(*rank),
                _ => None,
            });
            (
                terms
                    .iter()
                    .filter(|t| !matches!(t, Predicate::SizeRank { .. }))
                    .collect(),
                rank,
            )
        }
        Predicate::SizeRank { rank } => (Vec::new(), Some(*rank)),
        p => (vec![p], None),
    };
    let survivors: Vec<usize> = all
        .into_iter()
        .filter(|&i| filters.iter().all(|f| f.test(&boxes[i], velocities[i])))
        .collect();
    Ok(match rank {
        Some(r) => pick_rank(r, &survivors, boxes),
        None => survivors,
    })
}
