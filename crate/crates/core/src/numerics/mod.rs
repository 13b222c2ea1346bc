//! Dense tensors and reverse-mode differentiation for the handful of ops
//! the encoder needs.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout.
pub const LAYER_NORM_EPS: f64 = 1e-8;
