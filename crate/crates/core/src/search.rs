//! End-to-end predictor-guided search: observe N random architectures,
//! meta-train on synthetic tasks built from them, score every unseen
//! candidate, and evaluate only the top K.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::archspace::BenchmarkStore;
use crate::convnp::{ConvNp, ConvNpConfig, PredictOptions};
use crate::error::{Error, Result};
use crate::metrics::{best_of, RankingEvaluation};
use crate::rng::SeedPlan;
use crate::taskgen::{generate_tasks, identity_tasks, ObservedDataset};
use crate::trainer::{train, TrainConfig, TrainReport};

/// Read access to benchmark accuracies that counts every evaluation.
pub struct CountingOracle<'a> {
    store: &'a BenchmarkStore,
    reads: Cell<usize>,
}

impl<'a> CountingOracle<'a> {
    pub fn new(store: &'a BenchmarkStore) -> Self {
        Self {
            store,
            reads: Cell::new(0),
        }
    }

    /// Validation and test accuracy of record `i`; one evaluation.
    pub fn evaluate(&self, i: usize) -> (f64, f64) {
        self.reads.set(self.reads.get() + 1);
        let r = &self.store.records()[i];
        (r.val_acc, r.test_acc)
    }

    pub fn val_acc(&self, i: usize) -> f64 {
        self.evaluate(i).0
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }

    /// The underlying store, for cell and feature access.
    pub fn store(&self) -> &'a BenchmarkStore {
        self.store
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankScheme {
    /// Ranks 1..n, ties broken by index.
    #[default]
    Ordinal,
    /// Tied values share the mean of the ranks they span.
    Fractional,
}

impl std::str::FromStr for RankScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinal" => Ok(RankScheme::Ordinal),
            "fractional" => Ok(RankScheme::Fractional),
            other => Err(Error::invalid(format!("unknown rank scheme '{other}' (ordinal, fractional)"))),
        }
    }
}

/// Mean rank per candidate over the latent samples (rank 1 = highest
/// prediction) and the candidates ordered by ascending mean rank, ties by
/// index.
pub fn aggregate_ranks(means: &[Vec<f64>], scheme: RankScheme) -> (Vec<f64>, Vec<usize>) {
    let n = means.first().map_or(0, Vec::len);
    let mut total = vec![0.0; n];
    for row in means {
        let order = crate::metrics::descending(row);
        let mut pos = 0;
        while pos < n {
            let mut end = pos + 1;
            if scheme == RankScheme::Fractional {
                while end < n && row[order[end]] == row[order[pos]] {
                    end += 1;
                }
            }
            // Ranks pos+1..=end share their mean.
            let rank = (pos + 1 + end) as f64 / 2.0;
            for &i in &order[pos..end] {
                total[i] += rank;
            }
            pos = end;
        }
    }
    let l = means.len().max(1) as f64;
    let mean: Vec<f64> = total.into_iter().map(|t| t / l).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    (mean, order)
}

/// Observed-set indices for a training-size sweep: the largest sample is
/// drawn once and every smaller size takes its prefix.
pub fn nested_samples(store_len: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if largest > store_len {
        return Err(Error::invalid(format!("sample size {largest} exceeds store of {store_len}")));
    }
    let mut rng = crate::rng::rng(seed);
    let pool = rand::seq::index::sample(&mut rng, store_len, largest).into_vec();
    Ok(sizes.iter().map(|&s| pool[..s].to_vec()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Architectures observed before training.
    pub observed: usize,
    /// Synthetic tasks.
    pub tasks: usize,
    pub task_length: usize,
    /// Architectures evaluated after ranking.
    pub top_k: usize,
    /// Train on copies of the observed set instead of resampled tasks.
    pub no_synthetic: bool,
    pub rank_scheme: RankScheme,
    /// Targets per scoring chunk.
    pub chunk: usize,
    pub model: ConvNpConfig,
    /// `seed` is replaced by the run's training sub-seed.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            observed: 90,
            tasks: 10_000,
            task_length: 90,
            top_k: 30,
            no_synthetic: false,
            rank_scheme: RankScheme::Ordinal,
            chunk: 4096,
            model: ConvNpConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub observed_ids: Vec<String>,
    pub selected_ids: Vec<String>,
    pub recommended_id: String,
    pub best_val: f64,
    pub best_test: f64,
    /// Ranking quality over every unseen candidate (validation accuracy as
    /// truth; read outside the budget).
    pub evaluation: RankingEvaluation,
    pub budget: usize,
    pub seeds: SeedPlan,
    pub train: TrainReport,
    pub wall_s: f64,
}

/// Runs the search with a freshly drawn observed set.
pub fn run_search(store: &BenchmarkStore, features: &[Vec<f64>], config: &SearchConfig) -> Result<SearchResult> {
    let seeds = SeedPlan::new(config.seed);
    if config.observed == 0 || config.observed + config.top_k > store.len() {
        return Err(Error::invalid(format!(
            "observed {} + top-k {} must be within the store of {}",
            config.observed,
            config.top_k,
            store.len()
        )));
    }
    let mut rng = crate::rng::rng(seeds.sampling);
    let observed = rand::seq::index::sample(&mut rng, store.len(), config.observed).into_vec();
    run_search_with(store, features, config, &observed)
}

/// Runs the search on a given observed set (`config.observed` is ignored).
pub fn run_search_with(
    store: &BenchmarkStore,
    features: &[Vec<f64>],
    config: &SearchConfig,
    observed: &[usize],
) -> Result<SearchResult> {
    let start = Instant::now();
    let seeds = SeedPlan::new(config.seed);
    let m = store.len();
    if features.len() != m {
        return Err(Error::invalid("feature table does not match the store"));
    }
    if observed.is_empty() || config.top_k == 0 || observed.len() + config.top_k > m {
        return Err(Error::invalid(format!(
            "observed {} + top-k {} must be within the store of {m}",
            observed.len(),
            config.top_k
        )));
    }
    let oracle = CountingOracle::new(store);
    let mut seen = vec![false; m];
    let mut ys = Vec::with_capacity(observed.len());
    for &i in observed {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("record {i} observed twice")));
        }
        ys.push(oracle.val_acc(i) / 100.0);
    }
    let dataset = ObservedDataset::new(observed.iter().map(|&i| features[i].clone()).collect(), ys)?;

    let tasks = if config.no_synthetic {
        identity_tasks(dataset.len(), config.tasks)
    } else {
        generate_tasks(dataset.len(), config.tasks, config.task_length, seeds.tasks)?
    };
    let model_config = ConvNpConfig {
        input_dim: dataset.dim(),
        ..config.model.clone()
    };
    let mut model = ConvNp::new(model_config, seeds.init)?;
    let train_config = TrainConfig {
        seed: seeds.training,
        ..config.train.clone()
    };
    let report = train(&mut model, &dataset, &tasks, &train_config)?;

    let unseen: Vec<usize> = (0..m).filter(|&i| !seen[i]).collect();
    let cx: Vec<&[f64]> = dataset.inputs().iter().map(Vec::as_slice).collect();
    let tx: Vec<&[f64]> = unseen.iter().map(|&i| features[i].as_slice()).collect();
    let opts = PredictOptions {
        seed: seeds.latents,
        pin_latent: false,
    };
    let prediction = model.predict_chunked(&cx, dataset.targets(), &tx, opts, config.chunk)?;
    let (mean_rank, order) = aggregate_ranks(&prediction.means, config.rank_scheme);

    let selected: Vec<usize> = order[..config.top_k].iter().map(|&p| unseen[p]).collect();
    let evaluated: Vec<(f64, f64)> = selected.iter().map(|&i| oracle.evaluate(i)).collect();
    let budget = oracle.reads();
    debug_assert_eq!(budget, observed.len() + config.top_k);
    let val: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let test: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
    let (best_val, best_test) = best_of(&val, &test).expect("top-k is non-empty");
    let recommended = selected[val.iter().position(|&v| v == best_val).expect("present")];

    // Reporting only: ranking quality against every unseen candidate.
    let score: Vec<f64> = mean_rank.iter().map(|r| -r).collect();
    let truth: Vec<f64> = unseen.iter().map(|&i| store.records()[i].val_acc).collect();
    let mut evaluation = RankingEvaluation::of_scores(&score, &truth)?;
    evaluation.best_val = best_val;
    evaluation.best_test = best_test;

    let id = |i: usize| store.records()[i].id.clone();
    Ok(SearchResult {
        observed_ids: observed.iter().map(|&i| id(i)).collect(),
        selected_ids: selected.iter().map(|&i| id(i)).collect(),
        recommended_id: id(recommended),
        best_val,
        best_test,
        evaluation,
        budget,
        seeds,
        train: report,
        wall_s: start.elapsed().as_secs_f64(),
    })
}
