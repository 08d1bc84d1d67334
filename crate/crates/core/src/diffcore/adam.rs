use serde::{Deserialize, Serialize};

use super::{DiffError, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Adam {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` belongs to parameter `i`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), DiffError> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(DiffError::Param(
                "<all>".into(),
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            let id = super::ParamId(i);
            if g.shape() != params.get(id).shape() {
                return Err(DiffError::Param(
                    params.name(id).to_string(),
                    format!(
                        "gradient shape {:?} vs parameter {:?}",
                        g.shape(),
                        params.get(id).shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(super::ParamId(i));
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (&gj, pj)) in g.data().iter().zip(p.data_mut()).enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *pj -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![v])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            adam.step(&mut p, &[Tensor::vector(vec![0.0])]).unwrap();
        }
        assert_eq!(p.get(super::super::ParamId(0)).data(), &[0.7]);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        // m = 0.1, v = 0.001, mhat = 1, vhat = 1 -> delta = lr / (1 + eps).
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        let m = 0.1_f64 / (1.0 - 0.9);
        let v = 0.001_f64 / (1.0 - 0.999);
        let expected = -0.001 * m / (v.sqrt() + 1e-8);
        let got = p.get(super::super::ParamId(0)).data()[0];
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((got + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![0.3, 0.3])).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for k in 0..5 {
            let g = 0.1 * k as f64 - 0.2;
            adam.step(&mut p, &[Tensor::vector(vec![g, g])]).unwrap();
        }
        let d = p.get(super::super::ParamId(0)).data();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
    }
}
