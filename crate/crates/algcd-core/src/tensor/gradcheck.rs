//! Finite-difference gradient verification.
//!
//! [`grad_check`] evaluates a scalar-valued builder twice per perturbed
//! element (central differences) and compares against the reverse-mode
//! gradient. The relative error uses a unit floor in the denominator so
//! near-zero gradients are compared absolutely.

use super::{Graph, Tensor};
use crate::error::TensorError;

/// Finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Acceptance threshold on the max relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Initial value for one differentiable leaf of the function under test.
#[derive(Clone, Debug)]
pub struct LeafSpec {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl LeafSpec {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        LeafSpec { data, shape }
    }
}

fn eval<F>(f: &F, leaves: &[LeafSpec]) -> Result<f64, TensorError>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let g = Graph::new();
    let handles: Vec<Tensor> = leaves
        .iter()
        .map(|l| g.constant(l.data.clone(), &l.shape))
        .collect::<Result<_, _>>()?;
    f(&g, &handles)?.item()
}

/// Reverse-mode gradients of `f` with respect to every leaf, in leaf order.
pub fn analytic_gradients<F>(f: &F, leaves: &[LeafSpec]) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let g = Graph::new();
    let handles: Vec<Tensor> = leaves
        .iter()
        .map(|l| g.param(l.data.clone(), &l.shape))
        .collect::<Result<_, _>>()?;
    let loss = f(&g, &handles)?;
    loss.backward()?;
    Ok(handles
        .iter()
        .map(|h| h.grad().unwrap_or_else(|| vec![0.0; h.numel()]))
        .collect())
}

/// Central-difference gradients of `f`, one leaf element at a time.
pub fn numeric_gradients<F>(
    f: &F,
    leaves: &[LeafSpec],
    step: f64,
) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let mut out = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let mut grad = Vec::with_capacity(leaves[li].data.len());
        for ei in 0..leaves[li].data.len() {
            let mut plus = leaves.to_vec();
            plus[li].data[ei] += step;
            let mut minus = leaves.to_vec();
            minus[li].data[ei] -= step;
            grad.push((eval(f, &plus)? - eval(f, &minus)?) / (2.0 * step));
        }
        out.push(grad);
    }
    Ok(out)
}

/// `max_i |a_i − n_i| / max(1, |n_i|)` across all leaves.
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            let rel = (av - nv).abs() / nv.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Runs both gradient routes and returns the max relative error.
pub fn grad_check<F>(f: &F, leaves: &[LeafSpec], step: f64) -> Result<f64, TensorError>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let analytic = analytic_gradients(f, leaves)?;
    let numeric = numeric_gradients(f, leaves, step)?;
    Ok(max_rel_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_broken_gradient_fails() {
        // loss = sum(x ∘ x). Analytic gradient 2x matches central
        // differences; a deliberately wrong analytic gradient must not.
        let f = |_g: &Graph, l: &[Tensor]| l[0].mul(&l[0])?.sum_all();
        let leaves = [LeafSpec::new(vec![0.7, -1.2, 0.01], vec![1, 3])];
        let err = grad_check(&f, &leaves, DEFAULT_STEP).unwrap();
        assert!(err < DEFAULT_TOLERANCE, "max rel error {err}");

        let analytic = analytic_gradients(&f, &leaves).unwrap();
        let mut broken = analytic.clone();
        broken[0][0] += 0.05;
        let numeric = numeric_gradients(&f, &leaves, DEFAULT_STEP).unwrap();
        assert!(max_rel_error(&broken, &numeric) > DEFAULT_TOLERANCE);
    }
}
