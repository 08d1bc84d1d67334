//! Synthetic benchmark with a fixed, smooth ground-truth accuracy function.
//!
//! Accuracy is `lo + (hi - lo) * sigmoid(scale * (score(z) - center))`, where
//! `z` is the raw meta-feature vector divided by fixed per-measure scales and
//! `score` is a hard-coded quadratic with interaction terms. The output range
//! is [85, 95] for node-op cells and [35, 50] for edge-op cells. Validation
//! and test accuracy add independent Gaussian noise and are clamped to
//! [0, 100].
//!
//! Trainable parameters follow an affine model of the operation counts:
//!
//! * node-op: `230_000 + 850_000 * conv3x3 + 95_000 * conv1x1 + 12_000 * edges`
//! * edge-op: `80_000 + 220_000 * conv3x3 + 25_000 * conv1x1`

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::cell::{CellGraph, CellOps, EdgeOp, NodeOp, SpaceKind, EDGE_OP_EDGES, MAX_NODE_OP_NODES};
use super::store::{BenchmarkRecord, BenchmarkStore};
use crate::diffcore::sigmoid;
use crate::error::{Error, Result};
use crate::metafeatures::extract_raw;

/// Number of distinct edge-op cells (5 operations on 6 edges).
pub const EDGE_OP_CAPACITY: u64 = 15_625;

/// Smallest node count the node-op sampler draws.
const MIN_SAMPLED_NODES: usize = 3;

pub fn surrogate_params(cell: &CellGraph) -> u64 {
    match &cell.ops {
        CellOps::Node(ops) => {
            let c3 = ops.iter().filter(|&&o| o == NodeOp::Conv3x3).count() as u64;
            let c1 = ops.iter().filter(|&&o| o == NodeOp::Conv1x1).count() as u64;
            230_000 + 850_000 * c3 + 95_000 * c1 + 12_000 * cell.edge_count() as u64
        }
        CellOps::Edge(map) => {
            let c3 = map.values().filter(|&&o| o == EdgeOp::Conv3x3).count() as u64;
            let c1 = map.values().filter(|&&o| o == EdgeOp::Conv1x1).count() as u64;
            80_000 + 220_000 * c3 + 25_000 * c1
        }
    }
}

const NODE_SCALES: [f64; 13] = [
    5.0, 5.0, 5.0, 7.0, 15.0, 15.0, 15.0, 100.0, 5_000_000.0, 21.0, 3.0, 6.0, 6.0,
];
const EDGE_SCALES: [f64; 10] = [6.0, 6.0, 6.0, 6.0, 6.0, 15.0, 15.0, 15.0, 40.0, 1_400_000.0];

fn node_score(z: &[f64]) -> f64 {
    let [c3, c1, mp, nodes, pmax, pmin, pmode, ptot, params, edges, ratio, out_deg, in_deg] =
        z.try_into().expect("13 measures");
    1.8 * c3 + 0.9 * c1 - 0.6 * mp + 0.8 * nodes + 1.2 * pmax + 0.8 * pmin + 0.6 * pmode
        + 0.5 * ptot
        + 0.6 * edges
        - 1.5 * params * params
        - 0.8 * (ratio - 0.5) * (ratio - 0.5)
        + 0.4 * out_deg * c3
        - 0.3 * in_deg
}

fn edge_score(z: &[f64]) -> f64 {
    let [zero, c3, c1, avg, skip, pmax, pmin, _pmode, ptot, params] =
        z.try_into().expect("10 measures");
    2.0 * c3 + 1.2 * c1 + 0.3 * avg + 0.5 * skip - 2.5 * zero + 1.5 * ptot + 1.0 * pmin
        - 0.5 * pmax
        - 2.0 * (c3 - 0.6) * (c3 - 0.6)
        - 1.0 * params * params
        + 1.5 * c3 * skip
        - 1.0 * zero * pmin
}

/// (center, scale, lo, hi) of the logistic squashing per space.
fn squash(space: SpaceKind) -> (f64, f64, f64, f64) {
    match space {
        SpaceKind::NodeOp => (NODE_CENTER, NODE_SLOPE, 85.0, 95.0),
        SpaceKind::EdgeOp => (EDGE_CENTER, EDGE_SLOPE, 35.0, 50.0),
    }
}

// Centers sit at the median score of sampled cells.
const NODE_CENTER: f64 = 2.0;
const NODE_SLOPE: f64 = 2.0;
const EDGE_CENTER: f64 = 0.67;
const EDGE_SLOPE: f64 = 1.5;

/// Noise-free surrogate accuracy of a raw meta-feature vector.
pub fn surrogate_accuracy(space: SpaceKind, raw: &[f64]) -> f64 {
    let (scales, score): (&[f64], fn(&[f64]) -> f64) = match space {
        SpaceKind::NodeOp => (&NODE_SCALES, node_score),
        SpaceKind::EdgeOp => (&EDGE_SCALES, edge_score),
    };
    let z: Vec<f64> = raw.iter().zip(scales).map(|(v, s)| v / s).collect();
    let (center, slope, lo, hi) = squash(space);
    lo + (hi - lo) * sigmoid(slope * (score(&z) - center))
}

/// Edge-op cell with enumeration code `code` (base-5 digits, first edge most
/// significant).
pub fn edge_op_cell(code: u64) -> CellGraph {
    let mut ops = [EdgeOp::Zeroize; 6];
    let mut c = code;
    for slot in ops.iter_mut().rev() {
        *slot = EdgeOp::ALL[(c % 5) as usize];
        c /= 5;
    }
    CellGraph::edge_op(ops)
}

/// Enumeration code of an edge-op cell (inverse of [`edge_op_cell`]).
pub fn edge_op_code(cell: &CellGraph) -> Option<u64> {
    let CellOps::Edge(map) = &cell.ops else {
        return None;
    };
    let mut code = 0;
    for e in &EDGE_OP_EDGES {
        let op = map.get(e)?;
        code = code * 5 + EdgeOp::ALL.iter().position(|o| o == op)? as u64;
    }
    Some(code)
}

/// Whether the upper-triangular adjacency `bits` over `n` nodes connects
/// every node to both input and output.
fn node_adjacency_valid(n: usize, bits: u32) -> bool {
    let edge = |i: usize, j: usize| -> bool {
        // Bit index of (i, j) in row-major upper-triangular order.
        let idx = i * (2 * n - i - 1) / 2 + (j - i - 1);
        bits >> idx & 1 == 1
    };
    let mut fwd = 1u32;
    for i in 0..n {
        if fwd >> i & 1 == 1 {
            for j in i + 1..n {
                if edge(i, j) {
                    fwd |= 1 << j;
                }
            }
        }
    }
    let mut bwd = 1u32 << (n - 1);
    for i in (0..n - 1).rev() {
        if (i + 1..n).any(|j| edge(i, j) && bwd >> j & 1 == 1) {
            bwd |= 1 << i;
        }
    }
    let all = (1u32 << n) - 1;
    fwd == all && bwd == all
}

/// Number of distinct node-op cells the sampler can produce
/// (3..=7 nodes, every node on an input-output path).
pub fn node_op_capacity() -> u64 {
    static CAP: OnceLock<u64> = OnceLock::new();
    *CAP.get_or_init(|| {
        (MIN_SAMPLED_NODES..=MAX_NODE_OP_NODES)
            .map(|n| {
                let m = n * (n - 1) / 2;
                let valid = (0..1u32 << m)
                    .filter(|&b| node_adjacency_valid(n, b))
                    .count() as u64;
                valid * 3u64.pow((n - 2) as u32)
            })
            .sum()
    })
}

/// Random valid node-op cell. Node counts 3..=7 are drawn with weights
/// 1:2:4:8:16; edges are present with probability 1/2.
pub fn random_node_op_cell<R: Rng>(rng: &mut R) -> CellGraph {
    const WEIGHTS: [u32; 5] = [1, 2, 4, 8, 16];
    loop {
        let mut pick = rng.random_range(0..WEIGHTS.iter().sum::<u32>());
        let mut n = MIN_SAMPLED_NODES;
        for w in WEIGHTS {
            if pick < w {
                break;
            }
            pick -= w;
            n += 1;
        }
        let mut adj = vec![vec![false; n]; n];
        for (i, row) in adj.iter_mut().enumerate() {
            for cell in row.iter_mut().skip(i + 1) {
                *cell = rng.random_bool(0.5);
            }
        }
        let mut ops = vec![NodeOp::Input; n];
        ops[n - 1] = NodeOp::Output;
        for op in ops.iter_mut().take(n - 1).skip(1) {
            *op = NodeOp::INTERIOR[rng.random_range(0..3)];
        }
        let cell = CellGraph::node_op(adj, ops);
        if cell.is_valid() {
            return cell;
        }
    }
}

/// Stable id of a surrogate cell.
pub fn surrogate_id(cell: &CellGraph) -> String {
    match cell.space() {
        SpaceKind::EdgeOp => format!("nb201-{:05}", edge_op_code(cell).expect("edge cell")),
        SpaceKind::NodeOp => {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in cell.key().bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            format!("nb101-{h:016x}")
        }
    }
}

/// Surrogate benchmark of `count` distinct random cells. A pure function of
/// its arguments.
pub fn generate_surrogate(
    space: SpaceKind,
    count: usize,
    noise_std: f64,
    seed: u64,
) -> Result<BenchmarkStore> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise-std must be non-negative"));
    }
    let mut rng = crate::rng::rng(seed);
    let cells: Vec<CellGraph> = match space {
        SpaceKind::EdgeOp => {
            if count as u64 > EDGE_OP_CAPACITY {
                return Err(Error::CapacityExceeded {
                    requested: count,
                    capacity: EDGE_OP_CAPACITY,
                });
            }
            sample(&mut rng, EDGE_OP_CAPACITY as usize, count)
                .into_iter()
                .map(|c| edge_op_cell(c as u64))
                .collect()
        }
        SpaceKind::NodeOp => {
            let cap = node_op_capacity();
            if count as u64 > cap {
                return Err(Error::CapacityExceeded {
                    requested: count,
                    capacity: cap,
                });
            }
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let c = random_node_op_cell(&mut rng);
                if seen.insert(c.key()) {
                    out.push(c);
                }
            }
            out
        }
    };
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut records = Vec::with_capacity(count);
    let mut ids = HashSet::new();
    for cell in cells {
        let params = surrogate_params(&cell);
        let raw = extract_raw(&cell, params)?;
        let truth = surrogate_accuracy(space, &raw.values);
        let val_acc = (truth + noise.sample(&mut rng)).clamp(0.0, 100.0);
        let test_acc = (truth + noise.sample(&mut rng)).clamp(0.0, 100.0);
        let mut id = surrogate_id(&cell);
        while !ids.insert(id.clone()) {
            id.push('x');
        }
        records.push(BenchmarkRecord {
            id,
            cell,
            val_acc,
            test_acc,
            params,
        });
    }
    BenchmarkStore::from_records(
        records,
        format!("surrogate space={space} count={count} noise_std={noise_std} seed={seed}"),
    )
}
