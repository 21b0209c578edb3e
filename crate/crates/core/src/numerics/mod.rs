//! Tensor arithmetic with reverse-mode differentiation and a
//! finite-difference oracle.

pub mod check;
pub mod graph;
pub mod tensor;

pub use check::finite_diff_check;
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
