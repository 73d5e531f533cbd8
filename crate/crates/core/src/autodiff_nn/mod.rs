//! Dense `f64` tensors with tape-based reverse-mode differentiation and the
//! layer primitives used by the Bayesian networks.
//!
//! Linear and convolutional layers apply the `1/sqrt(fan_in)` scaling inside
//! the forward pass, so weight magnitudes are comparable across layer sizes.

pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use kernels::{Activation, LossKind};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
