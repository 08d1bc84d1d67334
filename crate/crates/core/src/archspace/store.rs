use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cell::{CellGraph, CellOps, EdgeOp, NodeOp, SpaceKind};
use crate::error::{Error, Result};

/// One evaluated architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub id: String,
    pub cell: CellGraph,
    /// Validation accuracy in percent.
    pub val_acc: f64,
    /// Test accuracy in percent.
    pub test_acc: f64,
    pub params: u64,
}

impl BenchmarkRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let violations = self.cell.validate();
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(msg.join("; "));
        }
        for (name, v) in [("val_acc", self.val_acc), ("test_acc", self.test_acc)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 100]"));
            }
        }
        Ok(())
    }
}

/// Wire format of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    space: SpaceKind,
    n: usize,
    adj: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_ops: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_ops: Option<BTreeMap<String, String>>,
    val_acc: f64,
    test_acc: f64,
    params: u64,
}

impl RecordLine {
    fn from_record(r: &BenchmarkRecord) -> Self {
        let adj = r
            .cell
            .adjacency
            .iter()
            .map(|row| row.iter().map(|&b| b as u8).collect())
            .collect();
        let (node_ops, edge_ops) = match &r.cell.ops {
            CellOps::Node(ops) => (Some(ops.iter().map(|o| o.as_str().to_string()).collect()), None),
            CellOps::Edge(map) => (
                None,
                Some(
                    map.iter()
                        .map(|((i, j), op)| (format!("{i}-{j}"), op.as_str().to_string()))
                        .collect(),
                ),
            ),
        };
        RecordLine {
            id: r.id.clone(),
            space: r.cell.space(),
            n: r.cell.n,
            adj,
            node_ops,
            edge_ops,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            params: r.params,
        }
    }

    fn into_record(self) -> std::result::Result<BenchmarkRecord, String> {
        let adjacency = self
            .adj
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(format!("adjacency entry {other} is not 0 or 1")),
                    })
                    .collect::<std::result::Result<Vec<bool>, String>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ops = match (self.space, self.node_ops, self.edge_ops) {
            (SpaceKind::NodeOp, Some(ops), None) => CellOps::Node(
                ops.iter()
                    .map(|s| s.parse::<NodeOp>())
                    .collect::<std::result::Result<_, _>>()?,
            ),
            (SpaceKind::EdgeOp, None, Some(map)) => {
                let mut out = BTreeMap::new();
                for (k, v) in map {
                    let (i, j) = k
                        .split_once('-')
                        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                        .ok_or_else(|| format!("bad edge key `{k}` (expected \"i-j\")"))?;
                    out.insert((i, j), v.parse::<EdgeOp>()?);
                }
                CellOps::Edge(out)
            }
            (SpaceKind::NodeOp, _, _) => {
                return Err("nb101 records need `node_ops` and no `edge_ops`".into())
            }
            (SpaceKind::EdgeOp, _, _) => {
                return Err("nb201 records need `edge_ops` and no `node_ops`".into())
            }
        };
        let cell = CellGraph {
            n: self.n,
            adjacency,
            ops,
        };
        Ok(BenchmarkRecord {
            id: self.id,
            cell,
            val_acc: self.val_acc,
            test_acc: self.test_acc,
            params: self.params,
        })
    }
}

/// Records of one search space, indexed by id. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct BenchmarkStore {
    space: Option<SpaceKind>,
    records: Vec<BenchmarkRecord>,
    index: HashMap<String, usize>,
    pub provenance: String,
}

impl BenchmarkStore {
    /// Builds a store, enforcing unique ids, a shared space and valid cells.
    pub fn from_records(records: Vec<BenchmarkRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut store = BenchmarkStore {
            provenance: provenance.into(),
            ..Default::default()
        };
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    fn push(&mut self, r: BenchmarkRecord) -> Result<()> {
        r.check().map_err(|violations| Error::InvalidCell {
            id: r.id.clone(),
            violations,
        })?;
        let space = r.cell.space();
        match self.space {
            Some(s) if s != space => {
                return Err(Error::SpaceMismatch {
                    expected: s.to_string(),
                    found: space.to_string(),
                })
            }
            _ => self.space = Some(space),
        }
        if self.index.contains_key(&r.id) {
            return Err(Error::DuplicateId(r.id));
        }
        self.index.insert(r.id.clone(), self.records.len());
        self.records.push(r);
        Ok(())
    }

    /// Space of the records; `None` for an empty store.
    pub fn space(&self) -> Option<SpaceKind> {
        self.space
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BenchmarkRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Reads a JSONL store. Blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut store = BenchmarkStore {
            provenance: path.display().to_string(),
            ..Default::default()
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg,
            };
            let raw: RecordLine =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let rec = raw.into_record().map_err(parse_err)?;
            store.push(rec).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, &RecordLine::from_record(r))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}
