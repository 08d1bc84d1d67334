//! `convnas`: command-line front end for the predictor, baselines and
//! experiment runners.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use convnas_core::archspace::{generate_surrogate, BenchmarkStore, SpaceKind};
use convnas_core::baselines::PredictorKind;
use convnas_core::convnp::ConvNp;
use convnas_core::experiment::{
    ablate, append_results, plot_data, read_results, run_evolution, run_predictor, run_random, sweep,
    ExperimentConfig, ExperimentManifest, ResultRow, Variant,
};
use convnas_core::metafeatures::FeatureTable;
use convnas_core::metrics::RankingEvaluation;
use convnas_core::objectives::{loss_curve_csv, LossMode};
use convnas_core::rng::SeedPlan;
use convnas_core::search::{nested_samples, run_search_with, RankScheme};
use convnas_core::taskgen::{generate_tasks, identity_tasks, save_tasks, ObservedDataset, SplitMode};
use convnas_core::trainer::train;
use serde_json::json;

#[derive(Parser)]
#[command(name = "convnas", version, about = "Meta-learned ConvNP performance prediction for cell-based NAS")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a benchmark JSONL store; print a summary.
    IngestValidate {
        #[arg(long)]
        store: PathBuf,
    },
    /// Generate a synthetic benchmark store.
    SurrogateGen {
        /// nb201 (edge-op) or nb101 (node-op).
        #[arg(long, default_value = "nb201")]
        space: SpaceKind,
        #[arg(long, default_value_t = 15_625)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write normalized meta-features (CSV) and their bounds (JSON).
    Features {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bounds_out: Option<PathBuf>,
    },
    /// Sample an observed set and write synthetic tasks over it.
    Tasks {
        #[command(flatten)]
        run: RunArgs,
        /// Tasks JSONL; indices refer to the observed ids file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ids_out: PathBuf,
    },
    /// Meta-train a ConvNP on a sampled observed set.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full predictor-guided search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a baseline (lr, rr, mlp, rs, re) on the same observed sets.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        method: String,
        #[arg(long, value_parser = parse_seeds, default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Kendall tau and Recall@k of predictions against truth.
    Evaluate {
        /// CSV with columns id,value.
        #[arg(long)]
        predictions: PathBuf,
        /// CSV with columns id,value.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training-set-size sweep with nested observed sets.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "50,90,172,344,516,688,860")]
        sizes: Vec<usize>,
        #[arg(long, value_parser = parse_seeds, default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Loss, split and task-generation ablations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Repeatable; defaults to every variant.
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        #[arg(long, value_parser = parse_seeds, default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mean Recall@k curves per method from a results CSV.
    Plotdata {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Store, config file and the overrides shared by the experiment commands.
#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    store: PathBuf,
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Observed architectures (N).
    #[arg(long)]
    observed: Option<usize>,
    /// Synthetic tasks (S).
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    task_length: Option<usize>,
    /// Evaluated top candidates (K).
    #[arg(long)]
    top_k: Option<usize>,
    /// Latent samples (L).
    #[arg(long)]
    latents: Option<usize>,
    /// mse, rank, hybrid, ml or ml+rank.
    #[arg(long)]
    loss: Option<LossMode>,
    /// subset, exclusive or nosplit.
    #[arg(long)]
    split_mode: Option<SplitMode>,
    #[arg(long)]
    no_synthetic: bool,
    /// Rescale each batch gradient to at most this norm.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    rank_scheme: Option<RankScheme>,
    /// Label for the benchmark column; defaults to the store file stem.
    #[arg(long)]
    benchmark: Option<String>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let s = &mut c.search;
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(s.seed, self.seed);
        set!(s.observed, self.observed);
        set!(s.tasks, self.tasks);
        set!(s.task_length, self.task_length);
        set!(s.top_k, self.top_k);
        set!(s.model.latents, self.latents);
        set!(s.train.loss.mode, self.loss);
        set!(s.train.split_mode, self.split_mode);
        set!(s.rank_scheme, self.rank_scheme);
        s.no_synthetic |= self.no_synthetic;
        if self.clip_norm.is_some() {
            s.train.clip_norm = self.clip_norm;
        }
        s.model.validate()?;
        s.train.validate()?;
        Ok(c)
    }

    fn benchmark(&self) -> String {
        self.benchmark.clone().unwrap_or_else(|| {
            self.store
                .file_stem()
                .map_or_else(|| "store".into(), |s| s.to_string_lossy().into_owned())
        })
    }
}

fn parse_seeds(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("bad seed `{s}`"))
}

/// Expands `3`, `0,4,7` or a half-open range `0..20`.
fn expand_seeds(raw: &[String]) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in raw.iter().flat_map(|r| r.split(',')) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad seed range `{part}`"))?;
            if a >= b {
                return Err(format!("empty seed range `{part}`"));
            }
            out.extend(a..b);
        } else {
            out.push(parse_seeds(part)?);
        }
    }
    Ok(out)
}

struct Loaded {
    store: BenchmarkStore,
    features: Vec<Vec<f64>>,
}

fn load(path: &Path) -> anyhow::Result<Loaded> {
    let store = BenchmarkStore::load(path).with_context(|| format!("loading {}", path.display()))?;
    let features = FeatureTable::build(&store)?.rows;
    Ok(Loaded { store, features })
}

fn observed_set(store_len: usize, n: usize, seed: u64) -> anyhow::Result<Vec<usize>> {
    Ok(nested_samples(store_len, &[n], SeedPlan::new(seed).sampling)?.remove(0))
}

fn manifest(
    subcommand: &str,
    run: Option<&RunArgs>,
    seeds: &[u64],
    out_dir: &Path,
    config: serde_json::Value,
    outputs: Vec<PathBuf>,
) -> ExperimentManifest {
    ExperimentManifest {
        subcommand: subcommand.into(),
        config_path: run.and_then(|r| r.config.clone()),
        store_path: run.map(|r| r.store.clone()),
        seeds: seeds.to_vec(),
        seed_plans: seeds.iter().map(|&s| SeedPlan::new(s)).collect(),
        output_dir: out_dir.to_path_buf(),
        config,
        outputs,
    }
}

fn write_rows(out_dir: &Path, rows: &[ResultRow]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("results.csv");
    append_results(&path, rows)?;
    Ok(path)
}

fn read_values(path: &Path) -> anyhow::Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let (Some(id), Some(v)) = (rec.get(0), rec.get(1)) else {
            bail!("{}: expected id,value rows", path.display());
        };
        let v: f64 = v.trim().parse().with_context(|| format!("{}: bad value `{v}`", path.display()))?;
        out.push((id.to_string(), v));
    }
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::IngestValidate { store } => {
            let s = BenchmarkStore::load(&store)?;
            let vals: Vec<f64> = s.records().iter().map(|r| r.val_acc).collect();
            let summary = json!({
                "records": s.len(),
                "space": s.space().map(|k| k.to_string()),
                "val_acc": {
                    "min": vals.iter().copied().fold(f64::INFINITY, f64::min),
                    "max": vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    "mean": vals.iter().sum::<f64>() / vals.len().max(1) as f64,
                },
                "provenance": s.provenance,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::SurrogateGen {
            space,
            count,
            noise_std,
            seed,
            out,
        } => {
            let store = generate_surrogate(space, count, noise_std, seed)?;
            store.save(&out)?;
            log::info!("wrote {} records to {}", store.len(), out.display());
        }
        Command::Features { store, out, bounds_out } => {
            let s = BenchmarkStore::load(&store)?;
            let table = FeatureTable::build(&s)?;
            std::fs::write(&out, table.to_csv(&s))?;
            if let Some(p) = bounds_out {
                table.bounds.save(&p)?;
            }
        }
        Command::Tasks { run, out, ids_out } => {
            let c = run.config()?.search;
            let Loaded { store, .. } = load(&run.store)?;
            let observed = observed_set(store.len(), c.observed, c.seed)?;
            let tasks = if c.no_synthetic {
                identity_tasks(observed.len(), c.tasks)
            } else {
                generate_tasks(observed.len(), c.tasks, c.task_length, SeedPlan::new(c.seed).tasks)?
            };
            save_tasks(&tasks, &out)?;
            let ids: Vec<&str> = observed.iter().map(|&i| store.records()[i].id.as_str()).collect();
            std::fs::write(&ids_out, serde_json::to_string_pretty(&ids)? + "\n")?;
        }
        Command::Train { run, out_dir } => {
            let c = run.config()?.search;
            let Loaded { store, features } = load(&run.store)?;
            let plan = SeedPlan::new(c.seed);
            let observed = observed_set(store.len(), c.observed, c.seed)?;
            let data = ObservedDataset::new(
                observed.iter().map(|&i| features[i].clone()).collect(),
                observed.iter().map(|&i| store.records()[i].val_acc / 100.0).collect(),
            )?;
            let tasks = if c.no_synthetic {
                identity_tasks(data.len(), c.tasks)
            } else {
                generate_tasks(data.len(), c.tasks, c.task_length, plan.tasks)?
            };
            let mut model = ConvNp::new(
                convnas_core::ConvNpConfig {
                    input_dim: data.dim(),
                    ..c.model.clone()
                },
                plan.init,
            )?;
            let tc = convnas_core::TrainConfig {
                seed: plan.training,
                ..c.train.clone()
            };
            let report = train(&mut model, &data, &tasks, &tc)?;
            std::fs::create_dir_all(&out_dir)?;
            let model_path = out_dir.join("model.json");
            let curve_path = out_dir.join("loss_curve.csv");
            let ids_path = out_dir.join("observed.json");
            model.save(&model_path)?;
            std::fs::write(&curve_path, loss_curve_csv(c.train.loss.mode, &report.losses))?;
            let ids: Vec<&str> = observed.iter().map(|&i| store.records()[i].id.as_str()).collect();
            std::fs::write(&ids_path, serde_json::to_string_pretty(&ids)? + "\n")?;
            let (head, tail) = report.head_tail(0.1);
            log::info!("{} steps in {:.1}s, loss {head:.4} -> {tail:.4}", report.steps, report.wall_s);
            manifest(
                "train",
                Some(&run),
                &[c.seed],
                &out_dir,
                serde_json::to_value(&c)?,
                vec![model_path, curve_path, ids_path],
            )
            .save(&out_dir.join("manifest.json"))?;
        }
        Command::Search { run, out_dir } => {
            let c = run.config()?.search;
            let Loaded { store, features } = load(&run.store)?;
            let observed = observed_set(store.len(), c.observed, c.seed)?;
            let result = run_search_with(&store, &features, &c, &observed)?;
            std::fs::create_dir_all(&out_dir)?;
            let result_path = out_dir.join("result.json");
            std::fs::write(&result_path, serde_json::to_string_pretty(&result)? + "\n")?;
            let row = ResultRow::from_search("convnp", &run.benchmark(), c.seed, &result);
            let csv_path = write_rows(&out_dir, &[row])?;
            println!(
                "recommended {} val {:.3} test {:.3} ktau {:.4} budget {}",
                result.recommended_id, result.best_val, result.best_test, result.evaluation.kendall_tau, result.budget
            );
            manifest("search", Some(&run), &[c.seed], &out_dir, serde_json::to_value(&c)?, vec![result_path, csv_path])
                .save(&out_dir.join("manifest.json"))?;
        }
        Command::Baseline {
            run,
            method,
            seeds,
            out_dir,
        } => {
            let c = run.config()?;
            let Loaded { store, features } = load(&run.store)?;
            let (n, k, bench) = (c.search.observed, c.search.top_k, run.benchmark());
            let mut rows = Vec::new();
            for &seed in &seeds {
                let row = match method.to_ascii_lowercase().as_str() {
                    "rs" => run_random(&store, n, k, seed, &bench)?,
                    "re" => run_evolution(&store, n, k, c.tournament, seed, &bench)?,
                    other => {
                        let kind: PredictorKind = other.parse()?;
                        let observed = observed_set(store.len(), n, seed)?;
                        run_predictor(&store, &features, kind, &observed, k, &c.cv, seed, &bench)?
                    }
                };
                rows.push(row);
            }
            let csv_path = write_rows(&out_dir, &rows)?;
            manifest("baseline", Some(&run), &seeds, &out_dir, serde_json::to_value(&c)?, vec![csv_path])
                .save(&out_dir.join("manifest.json"))?;
        }
        Command::Evaluate { predictions, truth, out } => {
            let pred = read_values(&predictions)?;
            let truth = read_values(&truth)?;
            let by_id: std::collections::HashMap<&str, f64> = truth.iter().map(|(id, v)| (id.as_str(), *v)).collect();
            let mut p = Vec::with_capacity(pred.len());
            let mut t = Vec::with_capacity(pred.len());
            for (id, v) in &pred {
                let Some(&y) = by_id.get(id.as_str()) else {
                    bail!("prediction id `{id}` has no truth value");
                };
                p.push(*v);
                t.push(y);
            }
            let e = RankingEvaluation::of_scores(&p, &t)?;
            let text = serde_json::to_string_pretty(&json!({
                "n": p.len(),
                "ktau": e.kendall_tau,
                "recall_at_k": e.recall_at_k,
            }))? + "\n";
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
        Command::Sweep {
            run,
            sizes,
            seeds,
            out_dir,
        } => {
            let c = run.config()?.search;
            let Loaded { store, features } = load(&run.store)?;
            let rows = sweep(&store, &features, &c, &sizes, &seeds, &run.benchmark())?;
            let csv_path = write_rows(&out_dir, &rows)?;
            let mut config = serde_json::to_value(&c)?;
            config["sizes"] = json!(sizes);
            manifest("sweep", Some(&run), &seeds, &out_dir, config, vec![csv_path])
                .save(&out_dir.join("manifest.json"))?;
        }
        Command::Ablate {
            run,
            variants,
            seeds,
            out_dir,
        } => {
            let c = run.config()?.search;
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let Loaded { store, features } = load(&run.store)?;
            let rows = ablate(&store, &features, &c, &variants, &seeds, &run.benchmark())?;
            let csv_path = write_rows(&out_dir, &rows)?;
            let mut config = serde_json::to_value(&c)?;
            config["variants"] = json!(variants);
            manifest("ablate", Some(&run), &seeds, &out_dir, config, vec![csv_path])
                .save(&out_dir.join("manifest.json"))?;
        }
        Command::Plotdata { results, out } => {
            let rows = read_results(&results)?;
            if rows.is_empty() {
                return Err(anyhow!("{} holds no result rows", results.display()));
            }
            std::fs::write(&out, plot_data(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let args = match expand_seed_args(raw) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Rewrites `--seeds 0..20` / `--seeds 1,2` into repeated single values.
fn expand_seed_args(raw: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(raw.len());
    let mut iter = raw.into_iter();
    while let Some(arg) = iter.next() {
        let value = if arg == "--seeds" {
            out.push(arg);
            match iter.next() {
                Some(v) => v,
                None => break,
            }
        } else if let Some(v) = arg.strip_prefix("--seeds=") {
            out.push("--seeds".into());
            v.to_string()
        } else {
            out.push(arg);
            continue;
        };
        let seeds = expand_seeds(&[value])?;
        let last = out.pop().expect("flag was pushed");
        for s in seeds {
            out.push(last.clone());
            out.push(s.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_expand() {
        assert_eq!(expand_seeds(&["0..3".into()]).unwrap(), vec![0, 1, 2]);
        assert_eq!(expand_seeds(&["4,9".into()]).unwrap(), vec![4, 9]);
        assert!(expand_seeds(&["3..3".into()]).is_err());
        let args = expand_seed_args(vec!["x".into(), "--seeds".into(), "1..3".into()]).unwrap();
        assert_eq!(args, vec!["x", "--seeds", "1", "--seeds", "2"]);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"search": {"observed": 50, "top_k": 10}}"#).unwrap();
        let cli = Cli::try_parse_from([
            "convnas", "search", "--store", "s.jsonl", "--config", path.to_str().unwrap(), "--top-k", "20",
            "--out-dir", "o",
        ])
        .unwrap();
        let Command::Search { run, .. } = cli.command else { panic!() };
        let c = run.config().unwrap().search;
        assert_eq!((c.observed, c.top_k), (50, 20));
    }
}
