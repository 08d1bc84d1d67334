//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass; it shares no code with
//! the backward rules it verifies.

use super::{Graph, NodeId, Tensor};

/// Numerical gradient of `f` at `inputs` with central differences.
///
/// `f` builds a scalar-valued graph from leaf values.
pub fn numeric_gradient(
    inputs: &[Tensor],
    step: f64,
    f: &dyn Fn(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let hi = f(&work);
            work[i].data_mut()[j] = orig - step;
            let lo = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (hi - lo) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Relative error `|a - n| / max(|a|, |n|, floor)` in the Euclidean norm.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / analytic.norm().max(numeric.norm()).max(floor)
}

/// Compares analytic and numeric gradients of a scalar function built by
/// `build` from trainable leaves. Returns the worst relative error.
pub fn check(
    inputs: &[Tensor],
    step: f64,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &leaves);
    g.forward(out).expect("forward");
    let grads = g.backward(out, Tensor::scalar(1.0)).expect("backward");
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &leaves);
        g.forward(out).expect("forward").item()
    };
    let numeric = numeric_gradient(inputs, step, &eval);
    leaves
        .iter()
        .zip(&numeric)
        .map(|(leaf, n)| {
            let zero = Tensor::zeros(n.shape());
            let a = grads.wrt(*leaf).unwrap_or(&zero);
            relative_error(a, n, 1e-8)
        })
        .fold(0.0, f64::max)
}
