//! Search baselines that query the benchmark directly: random search and
//! regularized (aging) evolution.

use std::collections::{HashMap, VecDeque};

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::archspace::{BenchmarkStore, CellGraph, CellOps, EdgeOp, NodeOp, EDGE_OP_EDGES};
use crate::error::{Error, Result};
use crate::search::CountingOracle;

/// Attempts at finding an in-store mutant before falling back to a random
/// record.
const MUTATION_RETRIES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Store index of the validation-best record seen.
    pub best: usize,
    pub best_val: f64,
    pub best_test: f64,
    /// Accuracy lookups spent.
    pub lookups: usize,
}

fn outcome(oracle: &CountingOracle, best: usize, best_val: f64) -> SearchOutcome {
    SearchOutcome {
        best,
        best_val,
        best_test: oracle.store().records()[best].test_acc,
        lookups: oracle.reads(),
    }
}

/// Validation-best of `budget` records drawn without replacement.
pub fn random_search(store: &BenchmarkStore, budget: usize, seed: u64) -> Result<SearchOutcome> {
    if budget == 0 || budget > store.len() {
        return Err(Error::invalid(format!("budget {budget} outside 1..={}", store.len())));
    }
    let oracle = CountingOracle::new(store);
    let mut rng = crate::rng::rng(seed);
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for i in sample(&mut rng, store.len(), budget) {
        let v = oracle.val_acc(i);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(outcome(&oracle, best.0, best.1))
}

/// A random single-step change of `cell`: one operation or, for node-op
/// cells, one edge. The result may be invalid.
fn mutate<R: rand::Rng>(cell: &CellGraph, rng: &mut R) -> CellGraph {
    match &cell.ops {
        CellOps::Edge(map) => {
            let mut ops: Vec<EdgeOp> = EDGE_OP_EDGES.iter().map(|e| map[e]).collect();
            let slot = rng.random_range(0..ops.len());
            let others: Vec<EdgeOp> = EdgeOp::ALL.into_iter().filter(|&o| o != ops[slot]).collect();
            ops[slot] = others[rng.random_range(0..others.len())];
            CellGraph::edge_op(ops.try_into().expect("six edges"))
        }
        CellOps::Node(ops) => {
            let n = cell.n;
            let mut adj = cell.adjacency.clone();
            let mut ops = ops.clone();
            if n > 2 && rng.random_bool(0.5) {
                let node = rng.random_range(1..n - 1);
                let others: Vec<NodeOp> = NodeOp::INTERIOR.into_iter().filter(|&o| o != ops[node]).collect();
                ops[node] = others[rng.random_range(0..others.len())];
            } else {
                let i = rng.random_range(0..n - 1);
                let j = rng.random_range(i + 1..n);
                adj[i][j] = !adj[i][j];
            }
            CellGraph::node_op(adj, ops)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub cycles: usize,
    /// Tournament size; `None` means 10% of the population, at least 2.
    pub sample_size: Option<usize>,
}

impl EvolutionConfig {
    pub fn tournament(&self) -> usize {
        self.sample_size
            .unwrap_or_else(|| (self.population / 10).max(2))
            .clamp(1, self.population.max(1))
    }
}

/// Aging evolution restricted to cells present in `store`. Spends exactly
/// `population + cycles` lookups.
pub fn regularized_evolution(store: &BenchmarkStore, config: EvolutionConfig, seed: u64) -> Result<SearchOutcome> {
    if config.population == 0 || config.population >= store.len() {
        return Err(Error::invalid(format!(
            "population {} must be in 1..{}",
            config.population,
            store.len()
        )));
    }
    let by_key: HashMap<String, usize> = store
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.cell.key(), i))
        .collect();
    let oracle = CountingOracle::new(store);
    let mut rng = crate::rng::rng(seed);
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    let mut population: VecDeque<(usize, f64)> = VecDeque::with_capacity(config.population);
    let consider = |i: usize, v: f64, best: &mut (usize, f64)| {
        if v > best.1 {
            *best = (i, v);
        }
    };
    for i in sample(&mut rng, store.len(), config.population) {
        let v = oracle.val_acc(i);
        consider(i, v, &mut best);
        population.push_back((i, v));
    }
    let tournament = config.tournament();
    for _ in 0..config.cycles {
        let parent = sample(&mut rng, population.len(), tournament)
            .into_iter()
            .map(|k| population[k])
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty tournament");
        let parent_cell = &store.records()[parent.0].cell;
        let child = (0..MUTATION_RETRIES)
            .find_map(|_| {
                let c = mutate(parent_cell, &mut rng);
                if c.is_valid() {
                    by_key.get(&c.key()).copied()
                } else {
                    None
                }
            })
            .unwrap_or_else(|| rng.random_range(0..store.len()));
        let v = oracle.val_acc(child);
        consider(child, v, &mut best);
        population.push_back((child, v));
        population.pop_front();
    }
    debug_assert_eq!(oracle.reads(), config.population + config.cycles);
    Ok(outcome(&oracle, best.0, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{generate_surrogate, SpaceKind};

    #[test]
    fn random_search_extremes() {
        let store = generate_surrogate(SpaceKind::EdgeOp, 300, 0.5, 1).unwrap();
        let all = random_search(&store, 300, 2).unwrap();
        let top = store.records().iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(all.best_val, top);
        assert_eq!(all.lookups, 300);
        let one = random_search(&store, 1, 2).unwrap();
        assert_eq!(one.best_val, store.records()[one.best].val_acc);
        assert!(random_search(&store, 301, 2).is_err());
    }

    #[test]
    fn evolution_spends_population_plus_cycles() {
        let store = generate_surrogate(SpaceKind::EdgeOp, 15_625, 0.5, 0).unwrap();
        let cfg = EvolutionConfig {
            population: 172,
            cycles: 30,
            sample_size: None,
        };
        assert_eq!(cfg.tournament(), 17);
        let out = regularized_evolution(&store, cfg, 5).unwrap();
        assert_eq!(out.lookups, 202);
    }

    #[test]
    fn zero_cycles_returns_best_initial_member() {
        let store = generate_surrogate(SpaceKind::NodeOp, 500, 0.5, 0).unwrap();
        let cfg = EvolutionConfig {
            population: 50,
            cycles: 0,
            sample_size: None,
        };
        let out = regularized_evolution(&store, cfg, 9).unwrap();
        let mut rng = crate::rng::rng(9);
        let initial = sample(&mut rng, store.len(), 50);
        let best = initial.iter().map(|i| store.records()[i].val_acc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val, best);
        assert_eq!(out.lookups, 50);
    }

    #[test]
    fn node_op_mutants_stay_in_store() {
        let store = generate_surrogate(SpaceKind::NodeOp, 400, 0.5, 2).unwrap();
        let cfg = EvolutionConfig {
            population: 40,
            cycles: 60,
            sample_size: Some(5),
        };
        let out = regularized_evolution(&store, cfg, 1).unwrap();
        assert_eq!(out.lookups, 100);
        assert!(out.best < store.len());
    }

    #[test]
    fn edge_mutation_changes_exactly_one_edge() {
        let mut rng = crate::rng::rng(0);
        let cell = crate::archspace::surrogate::edge_op_cell(1234);
        for _ in 0..50 {
            let m = mutate(&cell, &mut rng);
            let (CellOps::Edge(a), CellOps::Edge(b)) = (&cell.ops, &m.ops) else { unreachable!() };
            assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 1);
        }
    }
}
