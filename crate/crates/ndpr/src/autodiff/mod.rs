//! Dense-tensor numerical core: rank-<=2 tensors, a reverse-mode op record,
//! and Adam.

pub mod adam;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use params::{Gradients, ParamId, ParamSet, Parameter};
pub use tape::{AutodiffError, NodeId, Tape};
pub use tensor::Tensor;
