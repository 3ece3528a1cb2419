use serde::{Deserialize, Serialize};

use super::predicate::{Comparator, Motion, Predicate, Rank, Side};
use crate::scene::ClassId;

/// Minimum radial speed implied by "moving toward/away" without a number.
pub const IMPLIED_MOTION_SPEED: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Toward,
    Away,
    TowardFaster,
    AwayFaster,
    Faster,
    Slower,
    Left,
    Right,
    DepthBetween,
    CloserThan,
    Largest,
    Smallest,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 12] = [
        TemplateKind::Toward,
        TemplateKind::Away,
        TemplateKind::TowardFaster,
        TemplateKind::AwayFaster,
        TemplateKind::Faster,
        TemplateKind::Slower,
        TemplateKind::Left,
        TemplateKind::Right,
        TemplateKind::DepthBetween,
        TemplateKind::CloserThan,
        TemplateKind::Largest,
        TemplateKind::Smallest,
    ];

    /// Templates that a same-class distractor can disambiguate: the
    /// distractor differs from the referent only in velocity or position.
    pub fn supports_distractor(self) -> bool {
        matches!(
            self,
            TemplateKind::Toward | TemplateKind::Away | TemplateKind::Left | TemplateKind::Right
        )
    }
}

/// Numeric slots of a template; unused slots are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Operands {
    pub speed: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

fn class_word(class: ClassId, plural: bool) -> &'static str {
    match (class, plural) {
        (ClassId::Car, false) => "car",
        (ClassId::Car, true) => "cars",
        (ClassId::Pedestrian, false) => "pedestrian",
        (ClassId::Pedestrian, true) => "pedestrians",
        (ClassId::Cyclist, false) => "cyclist",
        (ClassId::Cyclist, true) => "cyclists",
    }
}

fn num(v: f64) -> String {
    format!("{v:.1}")
}

pub fn predicate_for(kind: TemplateKind, class: ClassId, ops: Operands) -> Predicate {
    let class_term = Predicate::Class { class };
    let second = match kind {
        TemplateKind::Toward => Predicate::MotionDirection {
            direction: Motion::Toward,
            min_speed: IMPLIED_MOTION_SPEED,
        },
        TemplateKind::Away => Predicate::MotionDirection {
            direction: Motion::Away,
            min_speed: IMPLIED_MOTION_SPEED,
        },
        TemplateKind::TowardFaster => Predicate::MotionDirection {
            direction: Motion::Toward,
            min_speed: ops.speed,
        },
        TemplateKind::AwayFaster => Predicate::MotionDirection {
            direction: Motion::Away,
            min_speed: ops.speed,
        },
        TemplateKind::Faster => Predicate::VelocityMagnitude {
            comparator: Comparator::Greater,
            speed: ops.speed,
        },
        TemplateKind::Slower => Predicate::VelocityMagnitude {
            comparator: Comparator::Less,
            speed: ops.speed,
        },
        TemplateKind::Left => Predicate::LateralSide { side: Side::Left },
        TemplateKind::Right => Predicate::LateralSide { side: Side::Right },
        TemplateKind::DepthBetween => Predicate::DepthRange {
            min: ops.depth_min,
            max: ops.depth_max,
        },
        TemplateKind::CloserThan => Predicate::DepthRange {
            min: 0.0,
            max: ops.depth_max,
        },
        TemplateKind::Largest => Predicate::SizeRank { rank: Rank::Largest },
        TemplateKind::Smallest => Predicate::SizeRank { rank: Rank::Smallest },
    };
    Predicate::All {
        terms: vec![class_term, second],
    }
}

/// English rendering; `plural` selects the class noun form.
pub fn render(kind: TemplateKind, class: ClassId, ops: Operands, plural: bool) -> String {
    let c = class_word(class, plural);
    match kind {
        TemplateKind::Toward => format!("the {c} moving toward us"),
        TemplateKind::Away => format!("the {c} moving away from us"),
        TemplateKind::TowardFaster => {
            format!("the {c} moving toward us faster than {} m/s", num(ops.speed))
        }
        TemplateKind::AwayFaster => {
            format!("the {c} moving away from us faster than {} m/s", num(ops.speed))
        }
        TemplateKind::Faster => format!("the {c} faster than {} m/s", num(ops.speed)),
        TemplateKind::Slower => format!("the {c} slower than {} m/s", num(ops.speed)),
        TemplateKind::Left => format!("the {c} on the left"),
        TemplateKind::Right => format!("the {c} on the right"),
        TemplateKind::DepthBetween => format!(
            "the {c} between {} and {} meters ahead",
            num(ops.depth_min),
            num(ops.depth_max)
        ),
        TemplateKind::CloserThan => format!("the {c} closer than {} meters", num(ops.depth_max)),
        TemplateKind::Largest => format!("the largest {}", class_word(class, false)),
        TemplateKind::Smallest => format!("the smallest {}", class_word(class, false)),
    }
}
