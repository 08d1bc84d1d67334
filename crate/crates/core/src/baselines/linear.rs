use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::ObservedDataset;

/// Conditioning term added to the normal equations of plain least squares.
const LSQ_RIDGE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::invalid("normal equations are not positive definite"))
}

/// Least squares with an intercept via regularized normal equations.
pub fn fit_linear(data: &ObservedDataset) -> Result<LinearModel> {
    let (n, d) = (data.len(), data.dim());
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { data.input(i)[j - 1] });
    let y = DVector::from_column_slice(data.targets());
    let gram = design.transpose() * &design + DMatrix::identity(d + 1, d + 1) * LSQ_RIDGE;
    let beta = solve(gram, design.transpose() * y)?;
    Ok(LinearModel {
        intercept: beta[0],
        weights: beta.iter().skip(1).copied().collect(),
    })
}

/// Ridge regression on centered data; the intercept is not penalized.
pub fn fit_ridge(data: &ObservedDataset, alpha: f64) -> Result<LinearModel> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("ridge alpha must be non-negative"));
    }
    let (n, d) = (data.len(), data.dim());
    let x_mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data.input(i)[j]).sum::<f64>() / n as f64)
        .collect();
    let y_mean = data.targets().iter().sum::<f64>() / n as f64;
    let x = DMatrix::from_fn(n, d, |i, j| data.input(i)[j] - x_mean[j]);
    let y = DVector::from_iterator(n, data.targets().iter().map(|v| v - y_mean));
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * (alpha + LSQ_RIDGE);
    let w = solve(gram, x.transpose() * y)?;
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
        intercept,
    })
}
