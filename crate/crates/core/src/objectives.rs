//! Training losses over an L x T block of predictions.
//!
//! Every loss exists twice: as a graph builder used for training and as a
//! plain function over slices used for reporting and as a reference in
//! tests.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "rank")]
    Rank,
    #[default]
    #[serde(rename = "hybrid")]
    Hybrid,
    #[serde(rename = "ml")]
    Ml,
    #[serde(rename = "ml+rank")]
    MlRank,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [Self::Mse, Self::Rank, Self::Hybrid, Self::Ml, Self::MlRank];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Rank => "rank",
            Self::Hybrid => "hybrid",
            Self::Ml => "ml",
            Self::MlRank => "ml+rank",
        }
    }

    /// Whether the loss reads predictive standard deviations.
    pub fn uses_std(self) -> bool {
        matches!(self, Self::Ml | Self::MlRank)
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the ranking term.
    pub lambda: f64,
    /// Hinge margin of the ranking term.
    pub margin: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            margin: 0.01,
            mode: LossMode::Hybrid,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.margin > 0.0) {
            return Err(Error::invalid("margin must be positive"));
        }
        Ok(())
    }
}

/// Index pairs `(i, j)` with `truth[i] > truth[j]`.
pub fn ordered_pairs(truth: &[f64]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &a) in truth.iter().enumerate() {
        for (j, &b) in truth.iter().enumerate() {
            if a > b {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Mean squared error of `means` ([L, T]) against `truth` ([T]).
pub fn mse_node(g: &mut Graph, means: NodeId, truth: &[f64]) -> NodeId {
    let y = g.constant(Tensor::vector(truth.to_vec()));
    let d = g.sub(means, y);
    let sq = g.square(d);
    g.mean(sq)
}

/// Mean hinge `max(0, m - (pred_i - pred_j))` over latents and ordered pairs;
/// a constant 0 when the truth is all tied.
pub fn rank_node(g: &mut Graph, means: NodeId, truth: &[f64], margin: f64) -> NodeId {
    let pairs = ordered_pairs(truth);
    if pairs.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let (hi, lo): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let a = g.gather(means, 1, hi);
    let b = g.gather(means, 1, lo);
    let gap = g.sub(b, a);
    let shifted = g.offset(gap, margin);
    let hinge = g.relu(shifted);
    g.mean(hinge)
}

/// Negative log of the latent-averaged joint Gaussian likelihood.
pub fn ml_node(g: &mut Graph, means: NodeId, stds: NodeId, truth: &[f64], latents: usize) -> NodeId {
    let y = g.constant(Tensor::vector(truth.to_vec()));
    let d = g.sub(y, means);
    let z = g.div(d, stds);
    let z2 = g.square(z);
    let half = g.scale(z2, -0.5);
    let log_std = g.log(stds);
    let dens = g.sub(half, log_std);
    let dens = g.offset(dens, -0.5 * (2.0 * PI).ln());
    let per_latent = g.sum_axis(dens, 1);
    let lse = g.logsumexp(per_latent);
    let avg = g.offset(lse, -(latents as f64).ln());
    g.neg(avg)
}

/// Loss selected by `config.mode`. `stds` is only read by the likelihood
/// modes.
pub fn loss_node(
    g: &mut Graph,
    config: &LossConfig,
    means: NodeId,
    stds: Option<NodeId>,
    truth: &[f64],
    latents: usize,
) -> Result<NodeId> {
    let need_std = || stds.ok_or_else(|| Error::invalid("likelihood loss needs predictive stds"));
    Ok(match config.mode {
        LossMode::Mse => mse_node(g, means, truth),
        LossMode::Rank => rank_node(g, means, truth, config.margin),
        LossMode::Hybrid => {
            let mse = mse_node(g, means, truth);
            let rank = rank_node(g, means, truth, config.margin);
            let weighted = g.scale(rank, config.lambda);
            g.add(mse, weighted)
        }
        LossMode::Ml => ml_node(g, means, need_std()?, truth, latents),
        LossMode::MlRank => {
            let ml = ml_node(g, means, need_std()?, truth, latents);
            let rank = rank_node(g, means, truth, config.margin);
            let weighted = g.scale(rank, config.lambda);
            g.add(ml, weighted)
        }
    })
}

fn check_block(means: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("empty target set"));
    }
    if means.is_empty() || means.iter().any(|row| row.len() != truth.len()) {
        return Err(Error::invalid("prediction block does not match the target set"));
    }
    Ok(())
}

pub fn mse(means: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_block(means, truth)?;
    let total: f64 = means
        .iter()
        .flat_map(|row| row.iter().zip(truth).map(|(p, y)| (y - p) * (y - p)))
        .sum();
    Ok(total / (means.len() * truth.len()) as f64)
}

pub fn rank(means: &[Vec<f64>], truth: &[f64], margin: f64) -> Result<f64> {
    check_block(means, truth)?;
    let pairs = ordered_pairs(truth);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = means
        .iter()
        .flat_map(|row| pairs.iter().map(move |&(i, j)| (margin - (row[i] - row[j])).max(0.0)))
        .sum();
    Ok(total / (means.len() * pairs.len()) as f64)
}

pub fn total(means: &[Vec<f64>], truth: &[f64], lambda: f64, margin: f64) -> Result<f64> {
    Ok(mse(means, truth)? + lambda * rank(means, truth, margin)?)
}

pub fn ml(means: &[Vec<f64>], stds: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_block(means, truth)?;
    check_block(stds, truth)?;
    if stds.iter().flatten().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let per_latent: Vec<f64> = means
        .iter()
        .zip(stds)
        .map(|(mu, sd)| {
            mu.iter()
                .zip(sd)
                .zip(truth)
                .map(|((m, s), y)| -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * ((y - m) / s).powi(2))
                .sum()
        })
        .collect();
    let top = per_latent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + per_latent.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    Ok(-(lse - (per_latent.len() as f64).ln()))
}

/// Loss curve as `step,mode,value` CSV rows.
pub fn loss_curve_csv(mode: LossMode, losses: &[f64]) -> String {
    let mut out = String::from("step,mode,value\n");
    for (step, v) in losses.iter().enumerate() {
        writeln!(out, "{},{mode},{v}", step + 1).unwrap();
    }
    out
}
