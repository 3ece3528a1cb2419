//! Small reverse-mode autodiff engine over dense f64 tensors.

pub mod conv;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use conv::{ConvSpec, DeformSpec};
pub use graph::{Gradients, Graph, Var};
pub use params::{NamedTensor, ParamId, ParamStore};
pub use tensor::Tensor;
