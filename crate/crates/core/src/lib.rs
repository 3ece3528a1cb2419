//! Radar point cloud and text prompt 3D referring expression comprehension.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
