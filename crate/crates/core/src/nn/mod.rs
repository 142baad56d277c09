//! Minimal tensor autodiff engine and the layer set used by the
//! parameter estimators: dilated causal convolution, parametric
//! rectifier, layer normalization, GRU, complex GRU, and (complex)
//! fully connected layers.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use tensor::{AutodiffError, Gradients, Graph, TensorId};
