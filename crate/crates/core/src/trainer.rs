//! Meta-training loop over synthetic tasks.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::convnp::{ConvNp, PredictOptions};
use crate::diffcore::{Adam, AdamConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::objectives::{loss_node, LossConfig};
use crate::rng::{derive, derive_index};
use crate::taskgen::{split, ObservedDataset, SplitMode, SyntheticTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_context: usize,
    pub split_mode: SplitMode,
    pub loss: LossConfig,
    /// Rescale the batch gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            max_context: 10,
            split_mode: SplitMode::Subset,
            loss: LossConfig::default(),
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_context == 0 {
            return Err(Error::invalid("epochs, batch-size and max-context must be positive"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning-rate must be non-negative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip-norm must be positive"));
            }
        }
        self.loss.validate()
    }

    pub fn steps(&self, tasks: usize) -> usize {
        self.epochs * tasks.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub wall_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Mean loss over the first and the last `fraction` of steps.
    pub fn head_tail(&self, fraction: f64) -> (f64, f64) {
        let n = self.losses.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..k]), mean(&self.losses[n - k..]))
    }
}

/// Loss and parameter gradients of one task under a fixed split.
fn task_gradient(
    model: &ConvNp,
    dataset: &ObservedDataset,
    context: &[usize],
    target: &[usize],
    config: &TrainConfig,
    latent_seed: u64,
) -> Result<(f64, Vec<(usize, Tensor)>)> {
    let cx: Vec<&[f64]> = context.iter().map(|&i| dataset.input(i)).collect();
    let cy: Vec<f64> = context.iter().map(|&i| dataset.target(i)).collect();
    let tx: Vec<&[f64]> = target.iter().map(|&i| dataset.input(i)).collect();
    let ty: Vec<f64> = target.iter().map(|&i| dataset.target(i)).collect();
    let mut g = Graph::new();
    let opts = PredictOptions {
        seed: latent_seed,
        pin_latent: false,
    };
    let nodes = model.build(&mut g, &cx, &cy, &tx, opts)?;
    let out = loss_node(&mut g, &config.loss, nodes.means, Some(nodes.stds), &ty, model.config().latents)?;
    let loss = g.forward(out)?.item();
    if !loss.is_finite() {
        return Ok((loss, Vec::new()));
    }
    let grads = g.backward(out, Tensor::scalar(1.0))?;
    Ok((loss, grads.params().map(|(id, t)| (id.0, t.clone())).collect()))
}

/// Trains `model` in place. Single-threaded, so the result is a pure
/// function of the model, data, tasks and config.
pub fn train(
    model: &mut ConvNp,
    dataset: &ObservedDataset,
    tasks: &[SyntheticTask],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("no tasks to train on"));
    }
    if let Some(bad) = tasks.iter().flat_map(|t| &t.indices).find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("task index {bad} outside dataset of {}", dataset.len())));
    }
    let start = Instant::now();
    let shuffle_seed = derive(config.seed, "shuffle");
    let split_seed = derive(config.seed, "split");
    let latent_seed = derive(config.seed, "latent");
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut losses = Vec::with_capacity(config.steps(tasks.len()));
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut draw = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut crate::rng::rng(derive_index(shuffle_seed, epoch as u64)));
        for batch in order.chunks(config.batch_size) {
            let step = losses.len();
            let mut grads = model.params().zeros_like();
            let mut total = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &t in batch {
                let task = &tasks[t];
                let max_context = config.max_context.min(task.len());
                let s = split(task, config.split_mode, max_context, derive_index(split_seed, draw))?;
                let (loss, task_grads) =
                    task_gradient(model, dataset, &s.context, &s.target, config, derive_index(latent_seed, draw))?;
                draw += 1;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        task_ids: batch.to_vec(),
                    });
                }
                total += loss;
                for (id, g) in task_grads {
                    grads[id].add_assign(&g.map(|v| v * scale));
                }
            }
            if let Some(max) = config.clip_norm {
                let norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
                if norm > max {
                    let f = max / norm;
                    for g in &mut grads {
                        *g = g.map(|v| v * f);
                    }
                }
            }
            adam.step(model.params_mut(), &grads)?;
            losses.push(total * scale);
            if step % 100 == 0 {
                log::debug!("step {step}: loss {:.6}", total * scale);
            }
        }
    }
    if !model.params().is_finite() {
        return Err(Error::NonFiniteLoss {
            step: losses.len(),
            task_ids: Vec::new(),
        });
    }
    Ok(TrainReport {
        steps: losses.len(),
        losses,
        wall_s: start.elapsed().as_secs_f64(),
        checkpoint: None,
    })
}
