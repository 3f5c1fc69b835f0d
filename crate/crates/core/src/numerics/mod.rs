//! Dense tensors with reverse-mode gradients.
//!
//! Every op is pure and records a backward rule only when one of its inputs
//! requires a gradient, so frozen subgraphs cost nothing at backward time.

pub mod gradcheck;
mod ops;
mod scalar;
mod tensor;

pub use scalar::Scalar;
pub use tensor::{grad_enabled, no_grad, numel, GradTape, Tensor};
