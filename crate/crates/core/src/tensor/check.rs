use crate::error::{Error, Result};

use super::graph::{Graph, TensorId};
use super::Tensor;

/// Absolute floor for the relative-error denominator, so near-zero
/// gradients do not blow the ratio up.
const REL_FLOOR: f64 = 1e-8;

/// Relative error between an analytic and a numeric derivative, with the
/// denominator floored at 1e-8.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central finite differences, coordinate by coordinate, and return the
/// worst relative error. 64-bit only: finite differences are unreliable
/// in 32-bit arithmetic.
pub fn finite_diff_check<F>(f: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, TensorId) -> Result<TensorId>,
{
    finite_diff_check_multi(|g, ids| f(g, ids[0]), std::slice::from_ref(input), eps)
}

/// Multi-input variant of [`finite_diff_check`]: every coordinate of every
/// input is perturbed in turn.
pub fn finite_diff_check_multi<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(Error::Autodiff(
            "finite_diff_check: eps must be positive".into(),
        ));
    }

    // Analytic gradients from one reverse sweep.
    let mut graph = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| graph.leaf_tensor(t, true)).collect();
    let loss = f(&mut graph, &ids)?;
    if graph.numel(loss) != 1 {
        return Err(Error::Autodiff(
            "finite_diff_check: function must produce a scalar".into(),
        ));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| graph.grad(*id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let eval = |points: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = points.iter().map(|t| g.leaf_tensor(t, false)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss))
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for coord in 0..input.numel() {
            let original = input.data()[coord];
            work[which].data_mut()[coord] = original + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[coord] = original - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let ad = analytic[which].get(coord).copied().unwrap_or(0.0);
            worst = worst.max(grad_rel_err(ad, numeric));
        }
    }
    Ok(worst)
}
