//! Cell-based search spaces: the cell data model and its validation, the
//! JSONL benchmark store, and a surrogate benchmark generator.

mod cell;
mod store;
pub mod surrogate;

pub use cell::{
    CellGraph, CellOps, EdgeOp, NodeOp, SpaceKind, Violation, EDGE_OP_EDGES, EDGE_OP_NODES,
    MAX_NODE_OP_NODES,
};
pub use store::{BenchmarkRecord, BenchmarkStore};
pub use surrogate::generate_surrogate;
