//! Convolutional neural process over scalar embeddings of meta-features.
//!
//! Pipeline for one (context, target) pair of sets:
//!
//! 1. A two-layer MLP maps every feature vector to a scalar `u`.
//! 2. A uniform grid spans `[min u - margin, max u + margin]` over the
//!    context and target embeddings.
//! 3. A set convolution with an RBF kernel puts a density channel and a
//!    density-normalized value channel on the grid.
//! 4. A residual CNN turns that into a per-grid-point diagonal Gaussian over
//!    a latent function `z`, from which `L` samples are drawn.
//! 5. A second residual CNN decodes every sample; a normalized RBF smoother
//!    reads it out at each target `u`, and a pointwise head emits a mean and
//!    a standard deviation.
//!
//! Kernel length-scales are learned as log-multiples of the grid spacing.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Checkpoint, Graph, NodeId, Padding, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

const DENSITY_EPS: f64 = 1e-8;
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvNpConfig {
    /// Meta-feature dimension.
    pub input_dim: usize,
    /// Number of latent samples per prediction.
    pub latents: usize,
    pub grid_points: usize,
    pub grid_margin: f64,
    pub embed_hidden: usize,
    pub channels: usize,
    /// Residual blocks in each of the encoder and decoder CNNs.
    pub layers: usize,
    pub kernel_size: usize,
    /// Initial RBF length-scale in units of grid spacing.
    pub lengthscale_init: f64,
}

impl Default for ConvNpConfig {
    fn default() -> Self {
        Self {
            input_dim: 10,
            latents: 1,
            grid_points: 64,
            grid_margin: 0.1,
            embed_hidden: 32,
            channels: 16,
            layers: 4,
            kernel_size: 5,
            lengthscale_init: 2.0,
        }
    }
}

impl ConvNpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.input_dim == 0 {
            return bad("input-dim must be positive");
        }
        if self.latents == 0 {
            return bad("latents must be at least 1");
        }
        if self.grid_points < 8 {
            return bad("grid-points must be at least 8");
        }
        if !(self.grid_margin > 0.0) || !(self.lengthscale_init > 0.0) {
            return bad("grid-margin and lengthscale-init must be positive");
        }
        if self.embed_hidden == 0 || self.channels == 0 || self.kernel_size == 0 {
            return bad("embed-hidden, channels and kernel-size must be positive");
        }
        Ok(())
    }
}

/// Means and standard deviations, both `latents x targets`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target_ids: Vec<String>,
}

impl PredictionSet {
    pub fn latents(&self) -> usize {
        self.means.len()
    }

    pub fn targets(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Mean over latent samples of each target's predicted mean.
    pub fn average(&self) -> Vec<f64> {
        let l = self.latents() as f64;
        (0..self.targets())
            .map(|t| self.means.iter().map(|row| row[t]).sum::<f64>() / l)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PredictOptions {
    /// Seed of the latent draws.
    pub seed: u64,
    /// Replace the latent standard deviation by zero.
    pub pin_latent: bool,
}

/// Graph nodes produced by [`ConvNp::build`].
#[derive(Clone, Copy, Debug)]
pub struct ModelNodes {
    /// `[L, T]`
    pub means: NodeId,
    /// `[L, T]`
    pub stds: NodeId,
    /// `[1, C, G]`
    pub latent_mean: NodeId,
    /// `[1, C, G]`
    pub latent_std: NodeId,
    /// Set-convolution density channel, `[1, G]`.
    pub density: NodeId,
}

#[derive(Clone, Debug)]
struct ConvBlock {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    embed1: ConvBlock,
    embed2: ConvBlock,
    enc_in: ConvBlock,
    enc_layers: Vec<ConvBlock>,
    latent_head: ConvBlock,
    dec_in: ConvBlock,
    dec_layers: Vec<ConvBlock>,
    head1: ConvBlock,
    head2: ConvBlock,
    enc_lengthscale: ParamId,
    read_lengthscale: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvNp {
    config: ConvNpConfig,
    params: ParamSet,
    layout: Layout,
}

/// Parameter names and shapes in insertion order.
fn param_shapes(c: &ConvNpConfig) -> Vec<(String, Vec<usize>)> {
    let ch = c.channels;
    let k = c.kernel_size;
    let mut out = vec![
        ("embed.0.weight".to_string(), vec![c.input_dim, c.embed_hidden]),
        ("embed.0.bias".to_string(), vec![c.embed_hidden]),
        ("embed.1.weight".to_string(), vec![c.embed_hidden, 1]),
        ("embed.1.bias".to_string(), vec![1]),
        ("encoder.in.weight".to_string(), vec![ch, 2, k]),
        ("encoder.in.bias".to_string(), vec![ch, 1]),
    ];
    for i in 0..c.layers {
        out.push((format!("encoder.{i}.weight"), vec![ch, ch, k]));
        out.push((format!("encoder.{i}.bias"), vec![ch, 1]));
    }
    out.push(("latent.weight".into(), vec![2 * ch, ch, 1]));
    out.push(("latent.bias".into(), vec![2 * ch, 1]));
    out.push(("decoder.in.weight".into(), vec![ch, ch, k]));
    out.push(("decoder.in.bias".into(), vec![ch, 1]));
    for i in 0..c.layers {
        out.push((format!("decoder.{i}.weight"), vec![ch, ch, k]));
        out.push((format!("decoder.{i}.bias"), vec![ch, 1]));
    }
    out.push(("head.0.weight".into(), vec![ch, ch, 1]));
    out.push(("head.0.bias".into(), vec![ch, 1]));
    out.push(("head.1.weight".into(), vec![2, ch, 1]));
    out.push(("head.1.bias".into(), vec![2, 1]));
    out.push(("encoder.log_lengthscale".into(), vec![]));
    out.push(("readout.log_lengthscale".into(), vec![]));
    out
}

impl Layout {
    fn resolve(config: &ConvNpConfig, params: &ParamSet) -> Result<Self> {
        for (name, shape) in param_shapes(config) {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        if params.len() != param_shapes(config).len() {
            return Err(Error::invalid("unexpected extra parameters"));
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let block = |p: &str| ConvBlock {
            weight: id(&format!("{p}.weight")),
            bias: id(&format!("{p}.bias")),
        };
        Ok(Self {
            embed1: block("embed.0"),
            embed2: block("embed.1"),
            enc_in: block("encoder.in"),
            enc_layers: (0..config.layers).map(|i| block(&format!("encoder.{i}"))).collect(),
            latent_head: block("latent"),
            dec_in: block("decoder.in"),
            dec_layers: (0..config.layers).map(|i| block(&format!("decoder.{i}"))).collect(),
            head1: block("head.0"),
            head2: block("head.1"),
            enc_lengthscale: id("encoder.log_lengthscale"),
            read_lengthscale: id("readout.log_lengthscale"),
        })
    }
}

/// Context points sorted by features (lexicographic, total order) and then
/// by value, so that every permutation of the context builds the same graph.
fn canonical_order(xs: &[&[f64]], ys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .iter()
            .zip(xs[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ys[a].total_cmp(&ys[b]))
    });
    order
}

fn rows_tensor(rows: &[&[f64]], dim: usize) -> Result<Tensor> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::invalid(format!("feature vector of length {}, expected {dim}", r.len())));
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::new(vec![rows.len(), dim], data)?)
}

impl ConvNp {
    /// Fresh model: fan-in scaled uniform weights, zero biases.
    pub fn new(config: ConvNpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::rng(seed);
        let mut params = ParamSet::new();
        for (name, shape) in param_shapes(&config) {
            let t = if name.ends_with("log_lengthscale") {
                Tensor::scalar(config.lengthscale_init.ln())
            } else if name.ends_with("bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = match shape.len() {
                    2 => shape[0],
                    _ => shape[1..].iter().product(),
                };
                let bound = (1.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)?
            };
            params.insert(name, t)?;
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ConvNpConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ConvNpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_params(&self.params, Some(serde_json::json!({ "convnp": config })))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ckpt
            .config
            .as_ref()
            .and_then(|c| c.get("convnp"))
            .ok_or_else(|| Error::invalid("checkpoint has no model config"))?;
        let config: ConvNpConfig = serde_json::from_value(config.clone())?;
        Self::from_params(config, ckpt.to_params()?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(self.checkpoint().save(path)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> NodeId {
        g.param(id, self.params.get(id))
    }

    /// `[n, r] -> [n, 1]`
    fn embed_node(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w1 = self.p(g, self.layout.embed1.weight);
        let b1 = self.p(g, self.layout.embed1.bias);
        let w2 = self.p(g, self.layout.embed2.weight);
        let b2 = self.p(g, self.layout.embed2.bias);
        let h = g.matmul(x, w1);
        let h = g.add(h, b1);
        let h = g.relu(h);
        let u = g.matmul(h, w2);
        g.add(u, b2)
    }

    fn conv(&self, g: &mut Graph, x: NodeId, block: &ConvBlock) -> NodeId {
        let w = self.p(g, block.weight);
        let b = self.p(g, block.bias);
        let y = g.conv1d(x, w, Padding::Same);
        g.add(y, b)
    }

    fn cnn(&self, g: &mut Graph, x: NodeId, input: &ConvBlock, layers: &[ConvBlock]) -> NodeId {
        let mut h = self.conv(g, x, input);
        for block in layers {
            let a = g.relu(h);
            let d = self.conv(g, a, block);
            h = g.add(h, d);
        }
        h
    }

    /// Squared distances between `points: [n, 1]` and `grid: [G]` divided by
    /// `2 * lengthscale^2`, negated: `[n, G]`.
    fn rbf_logits(&self, g: &mut Graph, points: NodeId, grid: NodeId, spacing: NodeId, log_ls: ParamId) -> NodeId {
        let ls = self.p(g, log_ls);
        let ls = g.exp(ls);
        let ls = g.mul(ls, spacing);
        let var = g.square(ls);
        let two_var = g.scale(var, 2.0);
        let d = g.sub(grid, points);
        let d2 = g.square(d);
        let q = g.div(d2, two_var);
        g.neg(q)
    }

    /// Builds the full model on `g`. `context_*` must already be in canonical
    /// order. `span` fixes the embedding range the grid is built from;
    /// otherwise it is the range of the context and target embeddings.
    fn build_sorted(
        &self,
        g: &mut Graph,
        context_x: &[&[f64]],
        context_y: &[f64],
        target_x: &[&[f64]],
        span: Option<(f64, f64)>,
        opts: PredictOptions,
    ) -> Result<ModelNodes> {
        let cfg = &self.config;
        if context_x.is_empty() {
            return Err(Error::invalid("context set is empty"));
        }
        if target_x.is_empty() {
            return Err(Error::invalid("target set is empty"));
        }
        let n_ctx = context_x.len();
        let n_tgt = target_x.len();
        let gp = cfg.grid_points;
        let ch = cfg.channels;
        let lat = cfg.latents;

        let xc = g.constant(rows_tensor(context_x, cfg.input_dim)?);
        let xt = g.constant(rows_tensor(target_x, cfg.input_dim)?);
        let uc = self.embed_node(g, xc);
        let ut = self.embed_node(g, xt);

        let (lo, hi) = match span {
            Some((lo, hi)) => (g.constant(Tensor::scalar(lo)), g.constant(Tensor::scalar(hi))),
            None => {
                let all = g.concat(&[uc, ut], 0);
                let lo = g.min(all);
                let hi = g.max(all);
                (lo, hi)
            }
        };
        let lo = g.offset(lo, -cfg.grid_margin);
        let hi = g.offset(hi, cfg.grid_margin);
        let width = g.sub(hi, lo);
        let fractions = g.constant(Tensor::vector((0..gp).map(|i| i as f64 / (gp - 1) as f64).collect()));
        let steps = g.mul(fractions, width);
        let grid = g.add(steps, lo);
        let spacing = g.scale(width, 1.0 / (gp - 1) as f64);

        // Set convolution.
        let logits = self.rbf_logits(g, uc, grid, spacing, self.layout.enc_lengthscale);
        let weights = g.exp(logits);
        let density = g.sum_axis(weights, 0);
        let yc = g.constant(Tensor::new(vec![1, n_ctx], context_y.to_vec())?);
        let signal = g.matmul(yc, weights);
        let denom = g.offset(density, DENSITY_EPS);
        let value = g.div(signal, denom);
        // Per-point density, so the CNN sees the same scale for any context size.
        let density_in = g.scale(density, 1.0 / n_ctx as f64);
        let channels = g.concat(&[density_in, value], 0);
        let enc_in = g.reshape(channels, &[1, 2, gp]);

        let h = self.cnn(g, enc_in, &self.layout.enc_in, &self.layout.enc_layers);
        let h = g.relu(h);
        let stats = self.conv(g, h, &self.layout.latent_head);
        let latent_mean = g.gather(stats, 1, (0..ch).collect());
        let pre_std = g.gather(stats, 1, (ch..2 * ch).collect());
        let latent_std = g.softplus(pre_std);
        let latent_std = g.offset(latent_std, STD_FLOOR);

        let mean_l = g.broadcast_to(latent_mean, &[lat, ch, gp]);
        let std_l = if opts.pin_latent {
            g.constant(Tensor::zeros(&[lat, ch, gp]))
        } else {
            g.broadcast_to(latent_std, &[lat, ch, gp])
        };
        let z = g.gaussian_sample(mean_l, std_l, opts.seed);
        let dec = self.cnn(g, z, &self.layout.dec_in, &self.layout.dec_layers);

        // Normalized RBF readout at target embeddings; the per-row shift is a
        // constant so it cancels exactly in value and gradient.
        let logits = self.rbf_logits(g, ut, grid, spacing, self.layout.read_lengthscale);
        let row_max: Vec<f64> = {
            let v = g.forward(logits)?;
            v.data().chunks(gp).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
        };
        let shift = g.constant(Tensor::new(vec![n_tgt, 1], row_max)?);
        let logits = g.sub(logits, shift);
        let k = g.exp(logits);
        let norm = g.sum_axis(k, 1);
        let k = g.div(k, norm);
        let flat = g.reshape(dec, &[lat * ch, gp]);
        let read = g.matmul_nt(flat, k);
        let read = g.reshape(read, &[lat, ch, n_tgt]);

        let h = self.conv(g, read, &self.layout.head1);
        let h = g.relu(h);
        let out = self.conv(g, h, &self.layout.head2);
        let means = g.gather(out, 1, vec![0]);
        let means = g.reshape(means, &[lat, n_tgt]);
        let pre = g.gather(out, 1, vec![1]);
        let pre = g.reshape(pre, &[lat, n_tgt]);
        let stds = g.softplus(pre);
        let stds = g.offset(stds, STD_FLOOR);
        Ok(ModelNodes {
            means,
            stds,
            latent_mean,
            latent_std,
            density,
        })
    }

    /// Builds the model on `g` for an arbitrary context order.
    pub fn build(
        &self,
        g: &mut Graph,
        context_x: &[&[f64]],
        context_y: &[f64],
        target_x: &[&[f64]],
        opts: PredictOptions,
    ) -> Result<ModelNodes> {
        if context_x.len() != context_y.len() {
            return Err(Error::invalid("context features and values differ in length"));
        }
        let order = canonical_order(context_x, context_y);
        let xs: Vec<&[f64]> = order.iter().map(|&i| context_x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| context_y[i]).collect();
        self.build_sorted(g, &xs, &ys, target_x, None, opts)
    }

    /// Scalar embeddings of feature vectors.
    pub fn embed(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.constant(rows_tensor(xs, self.config.input_dim)?);
        let u = self.embed_node(&mut g, x);
        Ok(g.forward(u)?.data().to_vec())
    }

    /// Latent mean and standard deviation (`[1, C, G]` each) for a context,
    /// with the grid built over the context embeddings alone.
    pub fn encode_context(&self, context_x: &[&[f64]], context_y: &[f64]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        // The first context point stands in as a target; it lies inside the
        // context range, so the grid is unchanged.
        let nodes = self.build(&mut g, context_x, context_y, &context_x[..1.min(context_x.len())], PredictOptions::default())?;
        g.forward(nodes.latent_std)?;
        let mean = g.forward(nodes.latent_mean)?.clone();
        let std = g.value(nodes.latent_std).expect("evaluated").clone();
        Ok((mean, std))
    }

    pub fn predict(
        &self,
        context_x: &[&[f64]],
        context_y: &[f64],
        target_x: &[&[f64]],
        opts: PredictOptions,
    ) -> Result<PredictionSet> {
        let mut g = Graph::new();
        let nodes = self.build(&mut g, context_x, context_y, target_x, opts)?;
        let means = g.forward(nodes.means)?.clone();
        let stds = g.forward(nodes.stds)?.clone();
        Ok(PredictionSet {
            means: means.data().chunks(target_x.len()).map(<[f64]>::to_vec).collect(),
            stds: stds.data().chunks(target_x.len()).map(<[f64]>::to_vec).collect(),
            target_ids: Vec::new(),
        })
    }

    /// Same result as [`ConvNp::predict`], evaluated `chunk` targets at a
    /// time in parallel. The grid is fixed from all embeddings up front and
    /// the latent draw is shared by every chunk.
    pub fn predict_chunked(
        &self,
        context_x: &[&[f64]],
        context_y: &[f64],
        target_x: &[&[f64]],
        opts: PredictOptions,
        chunk: usize,
    ) -> Result<PredictionSet> {
        if context_x.len() != context_y.len() {
            return Err(Error::invalid("context features and values differ in length"));
        }
        if context_x.is_empty() || target_x.is_empty() {
            return Err(Error::invalid("context and target sets must be non-empty"));
        }
        let chunk = chunk.max(1);
        let order = canonical_order(context_x, context_y);
        let xs: Vec<&[f64]> = order.iter().map(|&i| context_x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| context_y[i]).collect();
        let mut all = self.embed(&xs)?;
        all.extend(self.embed(target_x)?);
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let parts: Vec<PredictionSet> = target_x
            .par_chunks(chunk)
            .map(|targets| {
                let mut g = Graph::new();
                let nodes = self.build_sorted(&mut g, &xs, &ys, targets, Some((lo, hi)), opts)?;
                let means = g.forward(nodes.means)?.clone();
                let stds = g.forward(nodes.stds)?.clone();
                Ok(PredictionSet {
                    means: means.data().chunks(targets.len()).map(<[f64]>::to_vec).collect(),
                    stds: stds.data().chunks(targets.len()).map(<[f64]>::to_vec).collect(),
                    target_ids: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        let lat = self.config.latents;
        let mut out = PredictionSet {
            means: vec![Vec::with_capacity(target_x.len()); lat],
            stds: vec![Vec::with_capacity(target_x.len()); lat],
            target_ids: Vec::new(),
        };
        for part in parts {
            for l in 0..lat {
                out.means[l].extend_from_slice(&part.means[l]);
                out.stds[l].extend_from_slice(&part.stds[l]);
            }
        }
        Ok(out)
    }
}
