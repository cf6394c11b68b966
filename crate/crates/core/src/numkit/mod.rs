//! Dense tensors, reverse-mode differentiation and finite-difference oracles.

mod activation;
mod backend;
mod finite_diff;
mod tape;
mod tensor;

pub use activation::{Activation, MAX_ORDER};
pub use backend::{Backend, Eager};
pub use finite_diff::{finite_diff, numeric_gradient};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::softplus;
