//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! The operator set covers what the generator and both critics need: matrix
//! products, row/column broadcasting, layer normalization, (leaky) ReLU,
//! segment max-pooling, strided 3D convolution and average pooling. Gradients
//! can themselves be recorded and differentiated, which the gradient penalty
//! needs.

mod conv;
pub mod layers;
pub mod params;
mod tape;
mod tensor;

pub use params::{read_checkpoint, write_checkpoint, Bound, ParamError, ParameterStore, RmsProp};
pub use tape::{ConvSpec, DiffError, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::matmul;
