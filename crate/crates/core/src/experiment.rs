//! Multi-seed experiment runners and their CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::BenchmarkStore;
use crate::baselines::{fit_predictor, random_search, regularized_evolution, CvConfig, EvolutionConfig, PredictorKind};
use crate::error::{Error, Result};
use crate::metrics::{best_of, top_k, RankingEvaluation, RECALL_KS};
use crate::objectives::LossMode;
use crate::rng::{derive, SeedPlan};
use crate::search::{nested_samples, run_search_with, CountingOracle, SearchConfig, SearchResult};
use crate::taskgen::{ObservedDataset, SplitMode};

/// Everything a sweep, ablation or baseline run needs besides the store.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub search: SearchConfig,
    pub cv: CvConfig,
    /// Tournament size for regularized evolution.
    pub tournament: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

/// Pipeline variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Hybrid loss, context/target split, synthetic tasks.
    Full,
    Mse,
    Rank,
    Ml,
    MlRank,
    NoSplit,
    NoSynthetic,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::Mse,
        Variant::Rank,
        Variant::Ml,
        Variant::MlRank,
        Variant::NoSplit,
        Variant::NoSynthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Mse => "mse",
            Variant::Rank => "rank",
            Variant::Ml => "ml",
            Variant::MlRank => "ml+rank",
            Variant::NoSplit => "nosplit",
            Variant::NoSynthetic => "nosynthetic",
        }
    }

    /// Method label used in result rows.
    pub fn method(self) -> String {
        match self {
            Variant::Full => "convnp".into(),
            v => format!("convnp-{}", v.as_str()),
        }
    }

    pub fn apply(self, base: &SearchConfig) -> SearchConfig {
        let mut c = base.clone();
        let mut set_loss = |mode| c.train.loss.mode = mode;
        match self {
            Variant::Full => set_loss(LossMode::Hybrid),
            Variant::Mse => set_loss(LossMode::Mse),
            Variant::Rank => set_loss(LossMode::Rank),
            Variant::Ml => set_loss(LossMode::Ml),
            Variant::MlRank => set_loss(LossMode::MlRank),
            Variant::NoSplit => c.train.split_mode = SplitMode::NoSplit,
            Variant::NoSynthetic => c.no_synthetic = true,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s || (s == "hybrid" && *v == Variant::Full) || (s == "no-split" && *v == Variant::NoSplit) || (s == "no-synthetic" && *v == Variant::NoSynthetic))
            .ok_or_else(|| Error::invalid(format!("unknown variant '{s}'")))
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub benchmark: String,
    pub seed: u64,
    pub n_train: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Absent for methods that produce no ranking.
    pub ktau: Option<f64>,
    pub recall: BTreeMap<usize, f64>,
    pub budget: usize,
    pub wall_s: f64,
}

pub fn results_header() -> Vec<String> {
    let mut h: Vec<String> = ["method", "benchmark", "seed", "n_train", "val_acc", "test_acc", "ktau"]
        .map(String::from)
        .to_vec();
    h.extend(RECALL_KS.iter().map(|k| format!("recall@{k}")));
    h.push("budget".into());
    h.push("wall_s".into());
    h
}

impl ResultRow {
    pub fn from_search(method: &str, benchmark: &str, seed: u64, r: &SearchResult) -> Self {
        Self {
            method: method.into(),
            benchmark: benchmark.into(),
            seed,
            n_train: r.observed_ids.len(),
            val_acc: r.best_val,
            test_acc: r.best_test,
            ktau: Some(r.evaluation.kendall_tau),
            recall: r.evaluation.recall_at_k.clone(),
            budget: r.budget,
            wall_s: r.wall_s,
        }
    }

    fn record(&self) -> Vec<String> {
        let mut out = vec![
            self.method.clone(),
            self.benchmark.clone(),
            self.seed.to_string(),
            self.n_train.to_string(),
            self.val_acc.to_string(),
            self.test_acc.to_string(),
            self.ktau.map(|t| t.to_string()).unwrap_or_default(),
        ];
        out.extend(RECALL_KS.iter().map(|k| self.recall.get(k).map(|r| r.to_string()).unwrap_or_default()));
        out.push(self.budget.to_string());
        out.push(format!("{:.3}", self.wall_s));
        out
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("results row: bad {what}"));
        let num = |i: usize, what: &str| -> Result<f64> { rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(what)) };
        let opt = |i: usize| rec.get(i).filter(|v| !v.is_empty()).and_then(|v| v.parse::<f64>().ok());
        if rec.len() != results_header().len() {
            return Err(bad("field count"));
        }
        let mut recall = BTreeMap::new();
        for (j, k) in RECALL_KS.iter().enumerate() {
            if let Some(r) = opt(7 + j) {
                recall.insert(*k, r);
            }
        }
        let n = RECALL_KS.len();
        Ok(Self {
            method: rec[0].to_string(),
            benchmark: rec[1].to_string(),
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            n_train: rec[3].parse().map_err(|_| bad("n_train"))?,
            val_acc: num(4, "val_acc")?,
            test_acc: num(5, "test_acc")?,
            ktau: opt(6),
            recall,
            budget: rec[7 + n].parse().map_err(|_| bad("budget"))?,
            wall_s: num(8 + n, "wall_s")?,
        })
    }
}

/// Appends rows to a results CSV, writing the header when the file is new
/// or empty.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(results_header()).map_err(csv_error)?;
    }
    for row in rows {
        w.write_record(row.record()).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header != results_header() {
        return Err(Error::invalid(format!("{}: not a results table", path.display())));
    }
    r.records().map(|rec| ResultRow::parse(&rec.map_err(csv_error)?)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Mean Recall@k per (method, k) over all rows that report it, as
/// `method,k,recall` CSV.
pub fn plot_data(rows: &[ResultRow]) -> String {
    let mut sums: BTreeMap<(&str, usize), (f64, usize)> = BTreeMap::new();
    for row in rows {
        for (&k, &r) in &row.recall {
            let e = sums.entry((row.method.as_str(), k)).or_default();
            e.0 += r;
            e.1 += 1;
        }
    }
    let mut out = String::from("method,k,recall\n");
    for ((method, k), (sum, n)) in sums {
        out.push_str(&format!("{method},{k},{}\n", sum / n as f64));
    }
    out
}

fn unseen(store_len: usize, observed: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; store_len];
    for &i in observed {
        seen[i] = true;
    }
    (0..store_len).filter(|&i| !seen[i]).collect()
}

/// Fits a regression baseline on the observed set, scores the unseen set and
/// evaluates its top `k`.
pub fn run_predictor(
    store: &BenchmarkStore,
    features: &[Vec<f64>],
    kind: PredictorKind,
    observed: &[usize],
    k: usize,
    cv: &CvConfig,
    seed: u64,
    benchmark: &str,
) -> Result<ResultRow> {
    let start = Instant::now();
    let oracle = CountingOracle::new(store);
    let ys = observed.iter().map(|&i| oracle.val_acc(i) / 100.0).collect();
    let data = ObservedDataset::new(observed.iter().map(|&i| features[i].clone()).collect(), ys)?;
    let model = fit_predictor(kind, &data, cv, derive(seed, kind.as_str()))?;
    let rest = unseen(store.len(), observed);
    if k == 0 || k > rest.len() {
        return Err(Error::invalid(format!("top-k {k} outside 1..={}", rest.len())));
    }
    let xs: Vec<Vec<f64>> = rest.iter().map(|&i| features[i].clone()).collect();
    let scores = model.predict(&xs)?;
    let evaluated: Vec<(f64, f64)> = top_k(&scores, k).into_iter().map(|p| oracle.evaluate(rest[p])).collect();
    let val: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let test: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
    let (best_val, best_test) = best_of(&val, &test).expect("k > 0");
    let truth: Vec<f64> = rest.iter().map(|&i| store.records()[i].val_acc).collect();
    let eval = RankingEvaluation::of_scores(&scores, &truth)?;
    Ok(ResultRow {
        method: kind.to_string(),
        benchmark: benchmark.into(),
        seed,
        n_train: observed.len(),
        val_acc: best_val,
        test_acc: best_test,
        ktau: Some(eval.kendall_tau),
        recall: eval.recall_at_k,
        budget: oracle.reads(),
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Random search at budget `n_train + k`.
pub fn run_random(store: &BenchmarkStore, n_train: usize, k: usize, seed: u64, benchmark: &str) -> Result<ResultRow> {
    let start = Instant::now();
    let out = random_search(store, n_train + k, derive(seed, "rs"))?;
    Ok(ResultRow {
        method: "rs".into(),
        benchmark: benchmark.into(),
        seed,
        n_train,
        val_acc: out.best_val,
        test_acc: out.best_test,
        ktau: None,
        recall: BTreeMap::new(),
        budget: out.lookups,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Regularized evolution from a population of `n_train` for `k` cycles.
pub fn run_evolution(
    store: &BenchmarkStore,
    n_train: usize,
    k: usize,
    tournament: Option<usize>,
    seed: u64,
    benchmark: &str,
) -> Result<ResultRow> {
    let start = Instant::now();
    let config = EvolutionConfig {
        population: n_train,
        cycles: k,
        sample_size: tournament,
    };
    let out = regularized_evolution(store, config, derive(seed, "re"))?;
    Ok(ResultRow {
        method: "re".into(),
        benchmark: benchmark.into(),
        seed,
        n_train,
        val_acc: out.best_val,
        test_acc: out.best_test,
        ktau: None,
        recall: BTreeMap::new(),
        budget: out.lookups,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Training-set-size sweep. Per seed, the observed sets are nested.
pub fn sweep(
    store: &BenchmarkStore,
    features: &[Vec<f64>],
    config: &SearchConfig,
    sizes: &[usize],
    seeds: &[u64],
    benchmark: &str,
) -> Result<Vec<ResultRow>> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one size and one seed"));
    }
    let mut jobs = Vec::new();
    for &seed in seeds {
        let samples = nested_samples(store.len(), sizes, SeedPlan::new(seed).sampling)?;
        jobs.extend(samples.into_iter().map(|s| (seed, s)));
    }
    jobs.par_iter()
        .map(|(seed, observed)| {
            let c = SearchConfig {
                seed: *seed,
                ..config.clone()
            };
            let r = run_search_with(store, features, &c, observed)?;
            Ok(ResultRow::from_search("convnp", benchmark, *seed, &r))
        })
        .collect()
}

/// Runs every variant on every seed; all variants of one seed share the
/// observed set.
pub fn ablate(
    store: &BenchmarkStore,
    features: &[Vec<f64>],
    config: &SearchConfig,
    variants: &[Variant],
    seeds: &[u64],
    benchmark: &str,
) -> Result<Vec<ResultRow>> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one variant and one seed"));
    }
    let mut jobs = Vec::new();
    for &seed in seeds {
        let observed = nested_samples(store.len(), &[config.observed], SeedPlan::new(seed).sampling)?.remove(0);
        jobs.extend(variants.iter().map(|&v| (seed, v, observed.clone())));
    }
    jobs.par_iter()
        .map(|(seed, variant, observed)| {
            let c = SearchConfig {
                seed: *seed,
                ..variant.apply(config)
            };
            let r = run_search_with(store, features, &c, observed)?;
            Ok(ResultRow::from_search(&variant.method(), benchmark, *seed, &r))
        })
        .collect()
}

/// Record of one CLI invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub store_path: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub seed_plans: Vec<SeedPlan>,
    pub output_dir: PathBuf,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

impl ExperimentManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{generate_surrogate, SpaceKind};
    use crate::convnp::ConvNpConfig;
    use crate::metafeatures::FeatureTable;
    use crate::trainer::TrainConfig;

    fn tiny() -> SearchConfig {
        SearchConfig {
            tasks: 4,
            task_length: 12,
            top_k: 5,
            model: ConvNpConfig {
                grid_points: 16,
                channels: 4,
                layers: 1,
                ..ConvNpConfig::default()
            },
            train: TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            },
            ..SearchConfig::default()
        }
    }

    fn row(method: &str, recall: &[(usize, f64)]) -> ResultRow {
        ResultRow {
            method: method.into(),
            benchmark: "b".into(),
            seed: 0,
            n_train: 90,
            val_acc: 1.0,
            test_acc: 2.0,
            ktau: None,
            recall: recall.iter().copied().collect(),
            budget: 120,
            wall_s: 0.5,
        }
    }

    #[test]
    fn variants_parse_and_configure() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        let base = SearchConfig::default();
        assert!(Variant::NoSynthetic.apply(&base).no_synthetic);
        assert_eq!(Variant::NoSplit.apply(&base).train.split_mode, SplitMode::NoSplit);
        assert_eq!(Variant::Mse.apply(&base).train.loss.mode, LossMode::Mse);
        assert_eq!(Variant::Full.method(), "convnp");
    }

    #[test]
    fn results_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let mut a = row("convnp", &[(10, 0.5), (20, 0.25)]);
        a.ktau = Some(0.4);
        append_results(&path, &[a.clone()]).unwrap();
        append_results(&path, &[row("rs", &[])]).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], a);
        assert_eq!(back[1].ktau, None);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("method,")).count(), 1);
    }

    #[test]
    fn plot_data_has_one_row_per_method_and_k() {
        let rows = vec![
            row("a", &[(10, 0.2), (20, 0.4)]),
            row("a", &[(10, 0.4), (20, 0.6)]),
            row("b", &[(10, 1.0)]),
            row("rs", &[]),
        ];
        let csv = plot_data(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, vec!["method,k,recall", "a,10,0.30000000000000004", "a,20,0.5", "b,10,1"]);
    }

    #[test]
    fn sweep_emits_one_row_per_size_and_seed() {
        let store = generate_surrogate(SpaceKind::EdgeOp, 200, 0.5, 0).unwrap();
        let features = FeatureTable::build(&store).unwrap().rows;
        let rows = sweep(&store, &features, &tiny(), &[10, 20], &[1, 2], "s").unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r.budget, r.n_train + 5);
        }
    }

    #[test]
    fn baselines_spend_the_same_budget() {
        let store = generate_surrogate(SpaceKind::EdgeOp, 300, 0.5, 0).unwrap();
        let features = FeatureTable::build(&store).unwrap().rows;
        let observed: Vec<usize> = (0..40).collect();
        let cv = CvConfig {
            trials: 3,
            ..CvConfig::default()
        };
        for kind in [PredictorKind::Lr, PredictorKind::Rr] {
            let r = run_predictor(&store, &features, kind, &observed, 10, &cv, 0, "s").unwrap();
            assert_eq!(r.budget, 50);
            assert!(r.ktau.is_some());
        }
        assert_eq!(run_random(&store, 40, 10, 0, "s").unwrap().budget, 50);
        assert_eq!(run_evolution(&store, 40, 10, None, 0, "s").unwrap().budget, 50);
    }
}
