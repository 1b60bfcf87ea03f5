//! Dense `f64` tensors, a recording tape for reverse-mode gradients, and
//! the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod mask;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{TensorMap, TensorRecord};
pub use mask::BoolMatrix;
pub use params::{ParamId, ParamStore};
pub use tape::{canonical_sum, Activation, BatchStats, Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
