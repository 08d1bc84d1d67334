//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors, with an Adam optimizer and a versioned parameter checkpoint
//! format.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId, Padding};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {0} has not been evaluated; run forward first")]
    NotEvaluated(usize),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("bad tensor: {0}")]
    BadTensor(String),
    #[error("parameter `{0}`: {1}")]
    Param(String, String),
}
