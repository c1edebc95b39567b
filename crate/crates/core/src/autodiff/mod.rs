//! Dense-tensor reverse-mode automatic differentiation with double backward.

mod backward;
mod fd;
pub mod gradcheck;
mod graph;
mod tensor;

pub use backward::{forward, GradResult};
pub use fd::{finite_diff_grad, finite_diff_jacobian, max_rel_err};
pub use graph::{Graph, Node, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("non-finite value produced by {op} at node {node} ({path})")]
    NonFinite { op: &'static str, node: usize, path: String },
    #[error("gradient requested of non-scalar output with shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("graph was built without create_graph; second-order traversal unavailable")]
    GraphNotRetained,
    #[error("contract violation: {0}")]
    Contract(String),
}
