use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which family of cell a search space uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    /// Operations live on nodes (NAS-Bench-101 style), up to seven nodes.
    #[serde(rename = "nb101")]
    NodeOp,
    /// Operations live on the six edges of a fixed four-node DAG
    /// (NAS-Bench-201 style).
    #[serde(rename = "nb201")]
    EdgeOp,
}

impl SpaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceKind::NodeOp => "nb101",
            SpaceKind::EdgeOp => "nb201",
        }
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpaceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nb101" | "node-op" => Ok(SpaceKind::NodeOp),
            "nb201" | "edge-op" => Ok(SpaceKind::EdgeOp),
            other => Err(format!("unknown space `{other}` (expected nb101 or nb201)")),
        }
    }
}

/// Node label in a node-op cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeOp {
    Input,
    Output,
    Conv3x3,
    Conv1x1,
    MaxPool3x3,
}

impl NodeOp {
    pub const INTERIOR: [NodeOp; 3] = [NodeOp::Conv3x3, NodeOp::Conv1x1, NodeOp::MaxPool3x3];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeOp::Input => "input",
            NodeOp::Output => "output",
            NodeOp::Conv3x3 => "conv3x3",
            NodeOp::Conv1x1 => "conv1x1",
            NodeOp::MaxPool3x3 => "maxpool3x3",
        }
    }

    /// Complexity weight used for path features; input/output weigh 0.
    pub fn weight(self) -> u32 {
        match self {
            NodeOp::Conv3x3 => 3,
            NodeOp::Conv1x1 => 2,
            NodeOp::MaxPool3x3 => 1,
            NodeOp::Input | NodeOp::Output => 0,
        }
    }
}

impl FromStr for NodeOp {
    type Err = String;

    /// Accepts the canonical names and the labels used by the official
    /// benchmark distribution.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "input" => NodeOp::Input,
            "output" => NodeOp::Output,
            "conv3x3" | "conv3x3-bn-relu" => NodeOp::Conv3x3,
            "conv1x1" | "conv1x1-bn-relu" => NodeOp::Conv1x1,
            "maxpool3x3" => NodeOp::MaxPool3x3,
            other => return Err(format!("unknown node operation `{other}`")),
        })
    }
}

/// Edge label in an edge-op cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeOp {
    Zeroize,
    Conv3x3,
    Conv1x1,
    AvgPool3x3,
    Skip,
}

impl EdgeOp {
    pub const ALL: [EdgeOp; 5] = [
        EdgeOp::Zeroize,
        EdgeOp::Conv3x3,
        EdgeOp::Conv1x1,
        EdgeOp::AvgPool3x3,
        EdgeOp::Skip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeOp::Zeroize => "zeroize",
            EdgeOp::Conv3x3 => "conv3x3",
            EdgeOp::Conv1x1 => "conv1x1",
            EdgeOp::AvgPool3x3 => "avgpool3x3",
            EdgeOp::Skip => "skip",
        }
    }

    pub fn weight(self) -> u32 {
        match self {
            EdgeOp::Conv3x3 => 5,
            EdgeOp::Conv1x1 => 4,
            EdgeOp::AvgPool3x3 => 3,
            EdgeOp::Skip => 2,
            EdgeOp::Zeroize => 1,
        }
    }
}

impl FromStr for EdgeOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "zeroize" | "none" => EdgeOp::Zeroize,
            "conv3x3" | "nor_conv_3x3" => EdgeOp::Conv3x3,
            "conv1x1" | "nor_conv_1x1" => EdgeOp::Conv1x1,
            "avgpool3x3" | "avg_pool_3x3" => EdgeOp::AvgPool3x3,
            "skip" | "skip_connect" => EdgeOp::Skip,
            other => return Err(format!("unknown edge operation `{other}`")),
        })
    }
}

/// Operation labels of a cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CellOps {
    /// One label per node; first is `Input`, last is `Output`.
    Node(Vec<NodeOp>),
    /// One label per edge `(from, to)`.
    Edge(BTreeMap<(usize, usize), EdgeOp>),
}

/// A candidate architecture: a DAG over `n` nodes (strictly upper-triangular
/// adjacency) plus operation labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellGraph {
    pub n: usize,
    pub adjacency: Vec<Vec<bool>>,
    pub ops: CellOps,
}

/// Largest node count of a node-op cell.
pub const MAX_NODE_OP_NODES: usize = 7;
/// Node count of every edge-op cell.
pub const EDGE_OP_NODES: usize = 4;
/// Edges of the edge-op DAG in canonical (row-major) order.
pub const EDGE_OP_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// A single way in which a cell breaks the data-model invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NodeCount { n: usize, allowed: &'static str },
    AdjacencyShape,
    /// An entry on or below the diagonal is set: ordering/cycle violation.
    NotUpperTriangular { from: usize, to: usize },
    OpCount { expected: usize, found: usize },
    FirstNotInput,
    LastNotOutput,
    MisplacedIo { node: usize },
    MissingEdge { from: usize, to: usize },
    MissingEdgeOp { from: usize, to: usize },
    EdgeOpWithoutEdge { from: usize, to: usize },
    Unreachable { node: usize },
    DeadEnd { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeCount { n, allowed } => write!(f, "{n} nodes (allowed: {allowed})"),
            Violation::AdjacencyShape => f.write_str("adjacency is not n x n"),
            Violation::NotUpperTriangular { from, to } => {
                write!(f, "edge {from}->{to} is not forward (cycle/ordering)")
            }
            Violation::OpCount { expected, found } => {
                write!(f, "{found} node operations for {expected} nodes")
            }
            Violation::FirstNotInput => f.write_str("first node is not `input`"),
            Violation::LastNotOutput => f.write_str("last node is not `output`"),
            Violation::MisplacedIo { node } => write!(f, "interior node {node} is input/output"),
            Violation::MissingEdge { from, to } => write!(f, "edge {from}->{to} is missing"),
            Violation::MissingEdgeOp { from, to } => write!(f, "edge {from}->{to} has no operation"),
            Violation::EdgeOpWithoutEdge { from, to } => {
                write!(f, "operation given for absent edge {from}->{to}")
            }
            Violation::Unreachable { node } => write!(f, "node {node} unreachable from input"),
            Violation::DeadEnd { node } => write!(f, "node {node} cannot reach output"),
        }
    }
}

impl CellGraph {
    pub fn space(&self) -> SpaceKind {
        match self.ops {
            CellOps::Node(_) => SpaceKind::NodeOp,
            CellOps::Edge(_) => SpaceKind::EdgeOp,
        }
    }

    /// Node-op cell from an adjacency matrix and node labels.
    pub fn node_op(adjacency: Vec<Vec<bool>>, ops: Vec<NodeOp>) -> Self {
        CellGraph {
            n: adjacency.len(),
            adjacency,
            ops: CellOps::Node(ops),
        }
    }

    /// Edge-op cell from the six edge labels in [`EDGE_OP_EDGES`] order.
    pub fn edge_op(ops: [EdgeOp; 6]) -> Self {
        let mut adjacency = vec![vec![false; EDGE_OP_NODES]; EDGE_OP_NODES];
        let mut map = BTreeMap::new();
        for (&(i, j), op) in EDGE_OP_EDGES.iter().zip(ops) {
            adjacency[i][j] = true;
            map.insert((i, j), op);
        }
        CellGraph {
            n: EDGE_OP_NODES,
            adjacency,
            ops: CellOps::Edge(map),
        }
    }

    /// Number of edges in the adjacency matrix.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&b| b).count()
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
    }

    /// Every invariant violation; empty when the cell is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n;
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            out.push(Violation::AdjacencyShape);
            return out;
        }
        for i in 0..n {
            for j in 0..=i {
                if self.adjacency[i][j] {
                    out.push(Violation::NotUpperTriangular { from: i, to: j });
                }
            }
        }
        match &self.ops {
            CellOps::Node(ops) => {
                if !(2..=MAX_NODE_OP_NODES).contains(&n) {
                    out.push(Violation::NodeCount {
                        n,
                        allowed: "2..=7",
                    });
                }
                if ops.len() != n {
                    out.push(Violation::OpCount {
                        expected: n,
                        found: ops.len(),
                    });
                } else if n > 0 {
                    if ops[0] != NodeOp::Input {
                        out.push(Violation::FirstNotInput);
                    }
                    if ops[n - 1] != NodeOp::Output {
                        out.push(Violation::LastNotOutput);
                    }
                    for (i, op) in ops.iter().enumerate().take(n - 1).skip(1) {
                        if matches!(op, NodeOp::Input | NodeOp::Output) {
                            out.push(Violation::MisplacedIo { node: i });
                        }
                    }
                }
                if out.is_empty() && n >= 2 {
                    let fwd = self.reach_from(0);
                    let bwd = self.reach_to(n - 1);
                    for i in 1..n {
                        if !fwd[i] {
                            out.push(Violation::Unreachable { node: i });
                        }
                    }
                    for i in 0..n - 1 {
                        if !bwd[i] {
                            out.push(Violation::DeadEnd { node: i });
                        }
                    }
                }
            }
            CellOps::Edge(map) => {
                if n != EDGE_OP_NODES {
                    out.push(Violation::NodeCount { n, allowed: "4" });
                    return out;
                }
                for &(i, j) in &EDGE_OP_EDGES {
                    if !self.adjacency[i][j] {
                        out.push(Violation::MissingEdge { from: i, to: j });
                    }
                    if !map.contains_key(&(i, j)) {
                        out.push(Violation::MissingEdgeOp { from: i, to: j });
                    }
                }
                for &(i, j) in map.keys() {
                    if i >= n || j >= n || !self.adjacency[i][j] {
                        out.push(Violation::EdgeOpWithoutEdge { from: i, to: j });
                    }
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    fn reach_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        seen[start] = true;
        for i in start..self.n {
            if seen[i] {
                for j in self.successors(i).collect::<Vec<_>>() {
                    seen[j] = true;
                }
            }
        }
        seen
    }

    fn reach_to(&self, end: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        seen[end] = true;
        for i in (0..end).rev() {
            seen[i] = self.successors(i).any(|j| seen[j]);
        }
        seen
    }

    /// Compact, canonical text key; equal cells have equal keys.
    pub fn key(&self) -> String {
        let mut s = String::with_capacity(64);
        s.push_str(self.space().as_str());
        s.push(':');
        for row in &self.adjacency {
            for &b in row {
                s.push(if b { '1' } else { '0' });
            }
        }
        s.push(':');
        match &self.ops {
            CellOps::Node(ops) => {
                for op in ops {
                    s.push_str(op.as_str());
                    s.push(',');
                }
            }
            CellOps::Edge(map) => {
                for ((i, j), op) in map {
                    s.push_str(&format!("{i}-{j}={},", op.as_str()));
                }
            }
        }
        s
    }

    /// Relabels nodes by `perm` (old index -> new index). The permutation
    /// must keep input first, output last and every edge forward.
    pub fn relabel(&self, perm: &[usize]) -> CellGraph {
        let n = self.n;
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if self.adjacency[i][j] {
                    adjacency[perm[i]][perm[j]] = true;
                }
            }
        }
        let ops = match &self.ops {
            CellOps::Node(ops) => {
                let mut out = ops.clone();
                for (i, &op) in ops.iter().enumerate() {
                    out[perm[i]] = op;
                }
                CellOps::Node(out)
            }
            CellOps::Edge(map) => {
                CellOps::Edge(map.iter().map(|(&(i, j), &op)| ((perm[i], perm[j]), op)).collect())
            }
        };
        CellGraph { n, adjacency, ops }
    }
}
