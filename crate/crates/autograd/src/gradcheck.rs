//! Central finite differences and error measures for checking analytic gradients.

use crate::graph::{Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of several `f64` tensors.
/// Every element of every input is perturbed by `±eps`.
pub fn numeric_gradient(
    inputs: &[Tensor<f64>],
    eps: f64,
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> Vec<Tensor<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = f(&work);
            work[i].data_mut()[j] = orig - eps;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Reverse-mode gradient of `f` with respect to each input.
pub fn analytic_gradient<T: Real>(
    inputs: &[Tensor<T>],
    f: impl for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Var<'g, T>,
) -> Vec<Tensor<T>> {
    let g = Graph::new();
    let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(&out);
    vars.iter().map(|v| grads.wrt(v)).collect()
}

/// Scalar value of `f` on an inference graph.
pub fn evaluate<T: Real>(
    inputs: &[Tensor<T>],
    f: impl for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Var<'g, T>,
) -> T {
    let g = Graph::inference();
    let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&g, &vars).value().item()
}

/// `||a - b|| / max(||a||, ||b||)` over the concatenation of all tensors
/// (0 when both are zero).
pub fn relative_error<T: Real>(analytic: &[Tensor<T>], numeric: &[Tensor<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lists differ in length");
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shapes differ");
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let x = x.to_f64_lossy();
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Convenience: analytic vs central-difference relative error for a function
/// evaluated in `f64`.
pub fn check_f64(
    inputs: &[Tensor<f64>],
    eps: f64,
    f: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> f64 {
    let analytic = analytic_gradient(inputs, &f);
    let numeric = numeric_gradient(inputs, eps, |xs| evaluate(xs, &f));
    relative_error(&analytic, &numeric)
}
