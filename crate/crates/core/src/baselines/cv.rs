//! Regression baselines with hyperparameters chosen by k-fold
//! cross-validation over random draws.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::linear::{fit_linear, fit_ridge, LinearModel};
use super::mlp::{MlpHyper, MlpModel};
use crate::error::{Error, Result};
use crate::rng::{derive, derive_index};
use crate::taskgen::ObservedDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Lr,
    Rr,
    Mlp,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [PredictorKind::Lr, PredictorKind::Rr, PredictorKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Lr => "lr",
            PredictorKind::Rr => "rr",
            PredictorKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(PredictorKind::Lr),
            "rr" => Ok(PredictorKind::Rr),
            "mlp" => Ok(PredictorKind::Mlp),
            other => Err(Error::invalid(format!("unknown predictor '{other}' (lr, rr, mlp)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub trials: usize,
    /// log10 range of the ridge penalty.
    pub ridge_log10: (f64, f64),
    pub mlp_widths: [usize; 4],
    /// log10 range of the MLP learning rate.
    pub mlp_lr_log10: (f64, f64),
    pub mlp_steps: (usize, usize),
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            trials: 30,
            ridge_log10: (-4.0, 3.0),
            mlp_widths: [8, 16, 32, 64],
            mlp_lr_log10: (-3.0, -1.0),
            mlp_steps: (100, 500),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyper {
    Lr,
    Rr { alpha: f64 },
    Mlp(MlpHyper),
}

#[derive(Clone, Debug)]
enum Fitted {
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// A regression baseline fitted on the full observed set with its
/// cross-validated hyperparameters.
#[derive(Clone, Debug)]
pub struct FittedPredictor {
    pub kind: PredictorKind,
    pub hyper: Hyper,
    /// Mean fold MSE of the chosen hyperparameters (NaN for LR).
    pub cv_mse: f64,
    model: Fitted,
}

impl FittedPredictor {
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        match &self.model {
            Fitted::Linear(m) => Ok(xs.iter().map(|x| m.predict(x)).collect()),
            Fitted::Mlp(m) => m.predict(xs),
        }
    }
}

fn fit_one(data: &ObservedDataset, hyper: Hyper, seed: u64) -> Result<Fitted> {
    Ok(match hyper {
        Hyper::Lr => Fitted::Linear(fit_linear(data)?),
        Hyper::Rr { alpha } => Fitted::Linear(fit_ridge(data, alpha)?),
        Hyper::Mlp(h) => Fitted::Mlp(MlpModel::fit(data, h, seed)?),
    })
}

fn subset(data: &ObservedDataset, idx: &[usize]) -> Result<ObservedDataset> {
    ObservedDataset::new(
        idx.iter().map(|&i| data.input(i).to_vec()).collect(),
        idx.iter().map(|&i| data.target(i)).collect(),
    )
}

/// Mean held-out MSE of `hyper` over the given folds.
fn fold_mse(data: &ObservedDataset, folds: &[Vec<usize>], hyper: Hyper, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (f, held) in folds.iter().enumerate() {
        let mut train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        train_idx.sort_unstable();
        let model = fit_one(&subset(data, &train_idx)?, hyper, derive_index(seed, f as u64))?;
        let held_x: Vec<Vec<f64>> = held.iter().map(|&i| data.input(i).to_vec()).collect();
        let pred = match &model {
            Fitted::Linear(m) => held_x.iter().map(|x| m.predict(x)).collect(),
            Fitted::Mlp(m) => m.predict(&held_x)?,
        };
        let mse = held.iter().zip(&pred).map(|(&i, p)| (p - data.target(i)).powi(2)).sum::<f64>() / held.len() as f64;
        total += mse;
    }
    Ok(total / folds.len() as f64)
}

fn draw(kind: PredictorKind, cv: &CvConfig, rng: &mut crate::rng::Rng) -> Hyper {
    match kind {
        PredictorKind::Lr => Hyper::Lr,
        PredictorKind::Rr => Hyper::Rr {
            alpha: 10f64.powf(rng.random_range(cv.ridge_log10.0..=cv.ridge_log10.1)),
        },
        PredictorKind::Mlp => Hyper::Mlp(MlpHyper {
            hidden: *cv.mlp_widths.choose(rng).expect("widths are non-empty"),
            learning_rate: 10f64.powf(rng.random_range(cv.mlp_lr_log10.0..=cv.mlp_lr_log10.1)),
            steps: rng.random_range(cv.mlp_steps.0..=cv.mlp_steps.1),
        }),
    }
}

/// Fits `kind` on `data`. RR and MLP pick hyperparameters by random search
/// scored with k-fold mean MSE, then refit on everything. LR has nothing to
/// tune and skips cross-validation.
pub fn fit_predictor(kind: PredictorKind, data: &ObservedDataset, cv: &CvConfig, seed: u64) -> Result<FittedPredictor> {
    if kind == PredictorKind::Lr {
        return Ok(FittedPredictor {
            kind,
            hyper: Hyper::Lr,
            cv_mse: f64::NAN,
            model: fit_one(data, Hyper::Lr, seed)?,
        });
    }
    if cv.folds < 2 || cv.trials == 0 {
        return Err(Error::invalid("cross-validation needs at least 2 folds and 1 trial"));
    }
    if data.len() < cv.folds {
        return Err(Error::invalid(format!(
            "{} points cannot fill {} folds",
            data.len(),
            cv.folds
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut crate::rng::rng(derive(seed, "folds")));
    let folds: Vec<Vec<usize>> = (0..cv.folds)
        .map(|f| order.iter().copied().skip(f).step_by(cv.folds).collect())
        .collect();
    let mut rng = crate::rng::rng(derive(seed, "trials"));
    let fit_seed = derive(seed, "fit");
    let mut best: Option<(Hyper, f64)> = None;
    for _ in 0..cv.trials {
        let hyper = draw(kind, cv, &mut rng);
        let mse = fold_mse(data, &folds, hyper, fit_seed)?;
        if mse.is_finite() && best.is_none_or(|(_, b)| mse < b) {
            best = Some((hyper, mse));
        }
    }
    let (hyper, cv_mse) = best.ok_or_else(|| Error::invalid("every cross-validation trial diverged"))?;
    Ok(FittedPredictor {
        kind,
        hyper,
        cv_mse,
        model: fit_one(data, hyper, fit_seed)?,
    })
}
