//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]; a [`Graph`] records every operation applied to
//! registered tensors so [`Graph::backward`] can propagate gradients from a
//! scalar loss. Shapes are row-major and broadcasting is limited to repeating
//! a trailing-suffix operand over leading dimensions.

mod error;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Mismatch};
pub use graph::{Binary, Graph, Unary, Var};
pub use tensor::Tensor;

/// Scalar helpers matching the graph's pointwise ops.
pub mod scalar {
    pub use crate::graph::{gelu, sigmoid, softplus};
}
