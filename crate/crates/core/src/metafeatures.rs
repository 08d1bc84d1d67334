//! Meta-feature encoding of cells.
//!
//! Node-op cells get 13 measures, edge-op cells 10: operation counts, four
//! statistics over the weights of all input-to-output paths, the trainable
//! parameter count, and (node-op only) structural measures of the adjacency
//! matrix. Each measure is min-max normalized over the search space.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspace::{BenchmarkStore, CellGraph, CellOps, EdgeOp, NodeOp, SpaceKind};
use crate::error::{Error, Result};

pub const NODE_OP_SCHEMA: [&str; 13] = [
    "num_conv3x3",
    "num_conv1x1",
    "num_maxpool3x3",
    "num_nodes",
    "max_path_weight",
    "min_path_weight",
    "mode_path_weight",
    "total_path_weight",
    "trainable_params",
    "num_edges",
    "edges_per_node",
    "max_out_degree",
    "max_in_degree",
];

pub const EDGE_OP_SCHEMA: [&str; 10] = [
    "num_zeroize",
    "num_conv3x3",
    "num_conv1x1",
    "num_avgpool3x3",
    "num_skip",
    "max_path_weight",
    "min_path_weight",
    "mode_path_weight",
    "total_path_weight",
    "trainable_params",
];

pub fn schema(space: SpaceKind) -> &'static [&'static str] {
    match space {
        SpaceKind::NodeOp => &NODE_OP_SCHEMA,
        SpaceKind::EdgeOp => &EDGE_OP_SCHEMA,
    }
}

/// Encoded cell, raw or normalized depending on where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector {
    pub space: SpaceKind,
    pub values: Vec<f64>,
}

impl MetaFeatureVector {
    pub fn schema(&self) -> &'static [&'static str] {
        schema(self.space)
    }
}

/// Op-weight sum of every input-to-output path, ordered lexicographically by
/// node sequence.
pub fn enumerate_paths(cell: &CellGraph) -> Vec<u32> {
    let mut out = Vec::new();
    if cell.n == 0 {
        return out;
    }
    let node_weight = |i: usize| match &cell.ops {
        CellOps::Node(ops) => ops.get(i).map_or(0, |o| o.weight()),
        CellOps::Edge(_) => 0,
    };
    let edge_weight = |i: usize, j: usize| match &cell.ops {
        CellOps::Edge(map) => map.get(&(i, j)).map_or(0, |o| o.weight()),
        CellOps::Node(_) => 0,
    };
    // Iterative DFS; successors are visited in ascending order.
    let target = cell.n - 1;
    let mut stack: Vec<(usize, u32)> = vec![(0, node_weight(0))];
    while let Some((node, w)) = stack.pop() {
        if node == target {
            out.push(w);
            continue;
        }
        let succ: Vec<usize> = cell.successors(node).collect();
        for &j in succ.iter().rev() {
            stack.push((j, w + edge_weight(node, j) + node_weight(j)));
        }
    }
    out
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &[u32]) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best = (0, 0);
    for (&v, &c) in &counts {
        if c > best.1 {
            best = (v, c);
        }
    }
    best.0
}

/// Unnormalized meta-features. `params` comes from the benchmark record.
pub fn extract_raw(cell: &CellGraph, params: u64) -> Result<MetaFeatureVector> {
    let paths = enumerate_paths(cell);
    if paths.is_empty() {
        return Err(Error::NoPath);
    }
    let max = *paths.iter().max().expect("nonempty") as f64;
    let min = *paths.iter().min().expect("nonempty") as f64;
    let total: u64 = paths.iter().map(|&w| w as u64).sum();
    let path_stats = [max, min, mode(&paths) as f64, total as f64];
    let values = match &cell.ops {
        CellOps::Node(ops) => {
            let count = |op: NodeOp| ops.iter().filter(|&&o| o == op).count() as f64;
            let n = cell.n;
            let edges = cell.edge_count();
            let max_out = (0..n).map(|i| cell.successors(i).count()).max().unwrap_or(0);
            let max_in = (0..n)
                .map(|j| (0..n).filter(|&i| cell.adjacency[i][j]).count())
                .max()
                .unwrap_or(0);
            let mut v = vec![
                count(NodeOp::Conv3x3),
                count(NodeOp::Conv1x1),
                count(NodeOp::MaxPool3x3),
                n as f64,
            ];
            v.extend(path_stats);
            v.extend([
                params as f64,
                edges as f64,
                edges as f64 / n as f64,
                max_out as f64,
                max_in as f64,
            ]);
            v
        }
        CellOps::Edge(map) => {
            let mut v: Vec<f64> = EdgeOp::ALL
                .iter()
                .map(|&op| map.values().filter(|&&o| o == op).count() as f64)
                .collect();
            v.extend(path_stats);
            v.push(params as f64);
            v
        }
    };
    Ok(MetaFeatureVector {
        space: cell.space(),
        values,
    })
}

/// Per-measure minimum and maximum over a search space.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationBounds {
    pub space: SpaceKind,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Range {
    min: f64,
    max: f64,
}

impl NormalizationBounds {
    pub fn from_raw(space: SpaceKind, raw: &[MetaFeatureVector]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("cannot compute bounds of an empty set"));
        }
        let r = schema(space).len();
        let mut min = vec![f64::INFINITY; r];
        let mut max = vec![f64::NEG_INFINITY; r];
        for v in raw {
            if v.space != space || v.values.len() != r {
                return Err(Error::SpaceMismatch {
                    expected: space.to_string(),
                    found: v.space.to_string(),
                });
            }
            for (k, &x) in v.values.iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Ok(NormalizationBounds { space, min, max })
    }

    /// `(v - min) / (max - min)`, clamped to [0, 1]; constant measures map
    /// to 0.
    pub fn normalize(&self, raw: &MetaFeatureVector) -> Result<MetaFeatureVector> {
        if raw.space != self.space || raw.values.len() != self.min.len() {
            return Err(Error::SpaceMismatch {
                expected: self.space.to_string(),
                found: raw.space.to_string(),
            });
        }
        let values = raw
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (lo, hi) = (self.min[k], self.max[k]);
                if hi <= lo {
                    return 0.0;
                }
                let x = (v - lo) / (hi - lo);
                if !(0.0..=1.0).contains(&x) {
                    log::warn!(
                        "{} = {v} outside bounds [{lo}, {hi}]; clamped",
                        schema(self.space)[k]
                    );
                }
                x.clamp(0.0, 1.0)
            })
            .collect();
        Ok(MetaFeatureVector {
            space: self.space,
            values,
        })
    }

    /// JSON object: measure name -> {"min", "max"}.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, name) in schema(self.space).iter().enumerate() {
            map.insert(
                (*name).to_string(),
                serde_json::to_value(Range {
                    min: self.min[k],
                    max: self.max[k],
                })
                .expect("plain numbers"),
            );
        }
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let map: BTreeMap<String, Range> = serde_json::from_value(value.clone())?;
        let space = if map.contains_key("num_nodes") {
            SpaceKind::NodeOp
        } else {
            SpaceKind::EdgeOp
        };
        let names = schema(space);
        if map.len() != names.len() {
            return Err(Error::invalid(format!(
                "bounds have {} measures, {space} needs {}",
                map.len(),
                names.len()
            )));
        }
        let mut min = Vec::with_capacity(names.len());
        let mut max = Vec::with_capacity(names.len());
        for name in names {
            let r = map
                .get(*name)
                .ok_or_else(|| Error::invalid(format!("bounds lack measure `{name}`")))?;
            if r.min > r.max {
                return Err(Error::invalid(format!("bounds of `{name}` have min > max")));
            }
            min.push(r.min);
            max.push(r.max);
        }
        Ok(NormalizationBounds { space, min, max })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&v)
    }
}

/// Raw features of every record, in store order.
pub fn raw_features(store: &BenchmarkStore) -> Result<Vec<MetaFeatureVector>> {
    store
        .records()
        .iter()
        .map(|r| extract_raw(&r.cell, r.params))
        .collect()
}

/// Bounds over every cell of the store.
pub fn compute_bounds(store: &BenchmarkStore) -> Result<NormalizationBounds> {
    let space = store
        .space()
        .ok_or_else(|| Error::invalid("cannot compute bounds of an empty store"))?;
    NormalizationBounds::from_raw(space, &raw_features(store)?)
}

/// Normalized features of a whole store plus the bounds used.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub bounds: NormalizationBounds,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn build(store: &BenchmarkStore) -> Result<Self> {
        let space = store
            .space()
            .ok_or_else(|| Error::invalid("empty store"))?;
        let raw = raw_features(store)?;
        let bounds = NormalizationBounds::from_raw(space, &raw)?;
        let rows = raw
            .iter()
            .map(|v| bounds.normalize(v).map(|m| m.values))
            .collect::<Result<_>>()?;
        Ok(FeatureTable { bounds, rows })
    }

    pub fn dim(&self) -> usize {
        self.bounds.min.len()
    }

    /// CSV with a header of `id` followed by the schema names.
    pub fn to_csv(&self, store: &BenchmarkStore) -> String {
        let mut s = String::from("id");
        for name in schema(self.bounds.space) {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (rec, row) in store.records().iter().zip(&self.rows) {
            s.push_str(&rec.id);
            for v in row {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::EdgeOp;

    fn chain3() -> CellGraph {
        CellGraph::node_op(
            vec![
                vec![false, true, false],
                vec![false, false, true],
                vec![false, false, false],
            ],
            vec![NodeOp::Input, NodeOp::Conv3x3, NodeOp::Output],
        )
    }

    fn complete(n: usize) -> CellGraph {
        let mut adj = vec![vec![false; n]; n];
        for (i, row) in adj.iter_mut().enumerate() {
            for cell in row.iter_mut().skip(i + 1) {
                *cell = true;
            }
        }
        let mut ops = vec![NodeOp::Conv1x1; n];
        ops[0] = NodeOp::Input;
        ops[n - 1] = NodeOp::Output;
        CellGraph::node_op(adj, ops)
    }

    /// Path count of a complete DAG: P(last) = 1, P(i) = sum_{j>i} P(j).
    fn path_count_recurrence(n: usize) -> u64 {
        let mut p = vec![0u64; n];
        p[n - 1] = 1;
        for i in (0..n - 1).rev() {
            p[i] = p[i + 1..].iter().sum();
        }
        p[0]
    }

    #[test]
    fn chain_golden_vector() {
        let p = 4242;
        let v = extract_raw(&chain3(), p).unwrap();
        let expected = [
            1.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0, 3.0, p as f64, 2.0, 2.0 / 3.0, 1.0, 1.0,
        ];
        assert_eq!(v.values, expected);
        assert_eq!(enumerate_paths(&chain3()), vec![3]);
    }

    #[test]
    fn all_zeroize_edge_cell() {
        let c = CellGraph::edge_op([EdgeOp::Zeroize; 6]);
        // Lexicographic node sequences: 0-1-2-3, 0-1-3, 0-2-3, 0-3.
        assert_eq!(enumerate_paths(&c), vec![3, 2, 2, 1]);
        let v = extract_raw(&c, 0).unwrap();
        assert_eq!(&v.values[..5], &[6.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&v.values[5..9], &[3.0, 1.0, 2.0, 8.0]);
        assert_eq!(v.values.len(), 10);
    }

    #[test]
    fn complete_dag_path_counts() {
        for n in 2..=7 {
            assert_eq!(
                enumerate_paths(&complete(n)).len() as u64,
                path_count_recurrence(n)
            );
        }
        assert_eq!(path_count_recurrence(7), 32);
        assert_eq!(enumerate_paths(&CellGraph::edge_op([EdgeOp::Skip; 6])).len(), 4);
    }

    #[test]
    fn mode_prefers_smallest_on_ties() {
        assert_eq!(mode(&[5, 3, 5, 3, 9]), 3);
        assert_eq!(mode(&[7, 1, 4]), 1);
        assert_eq!(mode(&[2, 8, 8]), 8);
    }

    #[test]
    fn normalization_endpoints() {
        let b = NormalizationBounds {
            space: SpaceKind::EdgeOp,
            min: vec![1.0; 10],
            max: vec![5.0; 10],
        };
        let raw = |x: f64| MetaFeatureVector {
            space: SpaceKind::EdgeOp,
            values: vec![x; 10],
        };
        assert_eq!(b.normalize(&raw(1.0)).unwrap().values, vec![0.0; 10]);
        assert_eq!(b.normalize(&raw(5.0)).unwrap().values, vec![1.0; 10]);
        assert_eq!(b.normalize(&raw(3.0)).unwrap().values, vec![0.5; 10]);
        assert_eq!(b.normalize(&raw(9.0)).unwrap().values, vec![1.0; 10]);
        assert_eq!(b.normalize(&raw(-2.0)).unwrap().values, vec![0.0; 10]);
    }

    #[test]
    fn constant_measure_maps_to_zero() {
        let b = NormalizationBounds {
            space: SpaceKind::EdgeOp,
            min: vec![2.0; 10],
            max: vec![2.0; 10],
        };
        let raw = MetaFeatureVector {
            space: SpaceKind::EdgeOp,
            values: vec![2.0; 10],
        };
        assert_eq!(b.normalize(&raw).unwrap().values, vec![0.0; 10]);
    }

    #[test]
    fn bounds_json_round_trip() {
        let b = NormalizationBounds {
            space: SpaceKind::NodeOp,
            min: (0..13).map(|i| i as f64).collect(),
            max: (0..13).map(|i| 2.0 * i as f64 + 0.5).collect(),
        };
        let j = b.to_json();
        assert_eq!(j["num_nodes"]["min"], 3.0);
        assert_eq!(NormalizationBounds::from_json(&j).unwrap(), b);
    }

    #[test]
    fn relabeling_preserves_features() {
        // input -> {1, 2} -> 3 -> output; nodes 1 and 2 are unordered
        // siblings, so swapping them is a valid topological re-indexing.
        let mut adj = vec![vec![false; 5]; 5];
        adj[0][1] = true;
        adj[0][2] = true;
        adj[1][3] = true;
        adj[2][3] = true;
        adj[2][4] = true;
        adj[3][4] = true;
        let ops = vec![
            NodeOp::Input,
            NodeOp::Conv3x3,
            NodeOp::MaxPool3x3,
            NodeOp::Conv1x1,
            NodeOp::Output,
        ];
        let cell = CellGraph::node_op(adj, ops);
        let swapped = cell.relabel(&[0, 2, 1, 3, 4]);
        assert!(swapped.is_valid());
        assert_ne!(swapped, cell);
        assert_eq!(
            extract_raw(&cell, 7).unwrap(),
            extract_raw(&swapped, 7).unwrap()
        );
    }
}
