//! Meta-training tasks: resampled synthetic tasks over an observed dataset
//! and the per-batch context/target splits drawn from them.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::archspace::BenchmarkStore;
use crate::error::{Error, Result};
use crate::metafeatures::NormalizationBounds;

/// Observed (meta-feature, performance) pairs. Performance is stored as a
/// fraction (accuracy / 100).
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl ObservedDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let dim = inputs[0].len();
        if let Some(i) = inputs.iter().position(|x| x.len() != dim) {
            return Err(Error::invalid(format!("input {i} has length {}, expected {dim}", inputs[i].len())));
        }
        if let Some(i) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!("target {i} is not finite")));
        }
        Ok(Self { inputs, targets })
    }

    /// Normalized features and validation accuracy / 100 for the records at
    /// `indices` of `store`.
    pub fn from_store(
        store: &BenchmarkStore,
        bounds: &NormalizationBounds,
        indices: &[usize],
    ) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = store
                .records()
                .get(i)
                .ok_or_else(|| Error::invalid(format!("record index {i} out of range")))?;
            let raw = crate::metafeatures::extract_raw(&rec.cell, rec.params)?;
            inputs.push(bounds.normalize(&raw)?.values);
            targets.push(rec.val_acc / 100.0);
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// A fixed-length sequence of dataset indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub indices: Vec<usize>,
}

impl SyntheticTask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `count` tasks of `length` indices drawn with replacement from
/// `0..dataset_len`, each in random order.
pub fn generate_tasks(dataset_len: usize, count: usize, length: usize, seed: u64) -> Result<Vec<SyntheticTask>> {
    if dataset_len == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    if count == 0 {
        return Err(Error::invalid("task count must be at least 1"));
    }
    if length < 2 {
        return Err(Error::invalid("task length must be at least 2"));
    }
    let mut rng = crate::rng::rng(seed);
    Ok((0..count)
        .map(|_| {
            let mut indices: Vec<usize> = (0..length).map(|_| rng.random_range(0..dataset_len)).collect();
            indices.shuffle(&mut rng);
            SyntheticTask { indices }
        })
        .collect())
}

/// `count` copies of the whole dataset in its original order, for runs
/// without synthetic task generation.
pub fn identity_tasks(dataset_len: usize, count: usize) -> Vec<SyntheticTask> {
    let task = SyntheticTask {
        indices: (0..dataset_len).collect(),
    };
    vec![task; count]
}

pub fn save_tasks(tasks: &[SyntheticTask], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for task in tasks {
        serde_json::to_writer(&mut out, task)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Random context of size 1..=max_context; the target is the whole task.
    #[default]
    Subset,
    /// Random partition into a non-empty context and non-empty target.
    Exclusive,
    /// Context and target are both the whole task.
    NoSplit,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subset" => Ok(Self::Subset),
            "exclusive" => Ok(Self::Exclusive),
            "nosplit" | "no-split" => Ok(Self::NoSplit),
            _ => Err(Error::invalid(format!("unknown split mode {s:?}"))),
        }
    }
}

/// Context and target as dataset indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextTargetSplit {
    pub context: Vec<usize>,
    pub target: Vec<usize>,
    pub mode: SplitMode,
}

pub fn split(task: &SyntheticTask, mode: SplitMode, max_context: usize, seed: u64) -> Result<ContextTargetSplit> {
    let n = task.len();
    if max_context == 0 {
        return Err(Error::invalid("max-context must be at least 1"));
    }
    if max_context > n {
        return Err(Error::invalid(format!("max-context {max_context} exceeds task length {n}")));
    }
    let mut rng = crate::rng::rng(seed);
    let (context, target) = match mode {
        SplitMode::Subset => {
            let size = rng.random_range(1..=max_context);
            let picks = rand::seq::index::sample(&mut rng, n, size);
            let context = picks.iter().map(|p| task.indices[p]).collect();
            (context, task.indices.clone())
        }
        SplitMode::Exclusive => {
            if n < 2 {
                return Err(Error::invalid("exclusive split needs at least 2 points"));
            }
            let size = rng.random_range(1..=max_context.min(n - 1));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let context = order[..size].iter().map(|&p| task.indices[p]).collect();
            let target = order[size..].iter().map(|&p| task.indices[p]).collect();
            (context, target)
        }
        SplitMode::NoSplit => (task.indices.clone(), task.indices.clone()),
    };
    Ok(ContextTargetSplit { context, target, mode })
}
