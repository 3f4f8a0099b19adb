//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation in execution order; [`Graph::backward`]
//! walks the record once in reverse. The op set is exactly what the pooling
//! architectures need: products, affine maps, head reshaping, reductions,
//! softmax, sequence/layer normalization, GELU and cross-entropy.

mod check;
mod graph;
mod init;
mod kernels;
mod ops;
mod real;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub use graph::{Graph, Var};
pub use init::truncated_normal_init;
pub use real::Real;
pub use tensor::Tensor;

/// Epsilon for layer and sequence normalization; large enough for 32-bit runs.
pub const NORM_EPS: f64 = 1e-6;
