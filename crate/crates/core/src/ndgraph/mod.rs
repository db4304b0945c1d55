//! Minimal reverse-mode automatic differentiation.
//!
//! The engine offers only the operators the matching objectives need:
//! matrix products, column softmax, cross-entropies against constant
//! targets, a 3x3 convolution for the toy encoder and a handful of
//! reshaping / selection helpers. Graphs are rebuilt for every step.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{gradcheck, GradCheck};
pub use graph::{Graph, Var, LOG_EPS};
pub use tensor::{gemm, MatRef, Real, Tensor};
