use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, AdamConfig, Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::taskgen::ObservedDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Full-batch Adam steps.
    pub steps: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 1e-2,
            steps: 300,
        }
    }
}

/// One-hidden-layer relu regressor. Targets are standardized internally.
#[derive(Clone, Debug)]
pub struct MlpModel {
    params: ParamSet,
    y_mean: f64,
    y_scale: f64,
}

fn forward(g: &mut Graph, params: &ParamSet, x: NodeId) -> NodeId {
    let p: Vec<NodeId> = params.iter().map(|(id, _, t)| g.param(id, t)).collect();
    let h = g.matmul(x, p[0]);
    let h = g.add(h, p[1]);
    let h = g.relu(h);
    let o = g.matmul(h, p[2]);
    g.add(o, p[3])
}

fn design(data: &ObservedDataset) -> Tensor {
    let rows: Vec<Vec<f64>> = data.inputs().to_vec();
    Tensor::from_rows(&rows).expect("dataset rows share a length")
}

impl MlpModel {
    pub fn fit(data: &ObservedDataset, hyper: MlpHyper, seed: u64) -> Result<Self> {
        if hyper.hidden == 0 {
            return Err(Error::invalid("mlp hidden width must be positive"));
        }
        let (n, d, h) = (data.len(), data.dim(), hyper.hidden);
        let mut rng = crate::rng::rng(seed);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let b = (1.0 / fan_in as f64).sqrt();
            let len = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-b..b)).collect())
        };
        let mut params = ParamSet::new();
        params.insert("hidden.weight", uniform(&[d, h], d)?)?;
        params.insert("hidden.bias", Tensor::zeros(&[h]))?;
        params.insert("out.weight", uniform(&[h, 1], h)?)?;
        params.insert("out.bias", Tensor::zeros(&[1]))?;

        let y_mean = data.targets().iter().sum::<f64>() / n as f64;
        let var = data.targets().iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = Tensor::new(vec![n, 1], data.targets().iter().map(|v| (v - y_mean) / y_scale).collect())?;
        let x = design(data);

        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: hyper.learning_rate,
                ..AdamConfig::default()
            },
            &params,
        );
        for _ in 0..hyper.steps {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let yn = g.constant(y.clone());
            let out = forward(&mut g, &params, xn);
            let d = g.sub(out, yn);
            let sq = g.square(d);
            let loss = g.mean(sq);
            g.forward(loss)?;
            let grads = g.backward(loss, Tensor::scalar(1.0))?;
            let mut flat = params.zeros_like();
            for (id, t) in grads.params() {
                flat[id.0].add_assign(t);
            }
            adam.step(&mut params, &flat)?;
        }
        Ok(Self { params, y_mean, y_scale })
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(xs)?);
        let out = forward(&mut g, &self.params, x);
        Ok(g.forward(out)?.data().iter().map(|v| v * self.y_scale + self.y_mean).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck;

    #[test]
    fn mlp_loss_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng(3);
        let mut t = |r, c| Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (x, w1, w2, w3) = (t(6, 4), t(4, 5), t(5, 5), t(5, 1));
        let y = t(6, 1);
        let err = gradcheck::check(&[w1, w2, w3], 1e-5, &|g, p| {
            let xn = g.constant(x.clone());
            let yn = g.constant(y.clone());
            let h = g.matmul(xn, p[0]);
            let h = g.relu(h);
            let h = g.matmul(h, p[1]);
            let h = g.sigmoid(h);
            let o = g.matmul(h, p[2]);
            let d = g.sub(o, yn);
            let s = g.square(d);
            g.mean(s)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn fits_a_smooth_function() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let data = ObservedDataset::new(xs.clone(), ys.clone()).unwrap();
        let m = MlpModel::fit(&data, MlpHyper { steps: 1500, ..MlpHyper::default() }, 0).unwrap();
        let pred = m.predict(&xs).unwrap();
        let mse: f64 = pred.iter().zip(&ys).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 40.0;
        assert!(mse < 1e-2, "{mse}");
    }
}
