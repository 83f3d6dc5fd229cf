//! Plug-in Monte Carlo functionals over density/score evaluations at an
//! i.i.d. sample: differential entropy, Fisher information, and relative
//! Fisher information. Each comes with the standard error of its sample
//! mean so callers can form confidence bands.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// H ≈ −(1/n) Σ log f(x_i) for x_i ~ f.
pub fn entropy(density_values: &[f64]) -> Result<f64> {
    entropy_with_se(density_values).map(|(h, _)| h)
}

pub fn entropy_with_se(density_values: &[f64]) -> Result<(f64, f64)> {
    if density_values.is_empty() {
        return Err(Error::config("entropy of empty sample".to_string()));
    }
    if let Some(bad) = density_values.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::numeric(format!("nonpositive density value {bad}")));
    }
    let terms: Vec<f64> = density_values.iter().map(|v| -v.ln()).collect();
    Ok(mean_and_se(&terms))
}

/// I(f) ≈ (1/n) Σ ‖s(x_i)‖² for x_i ~ f.
pub fn fisher_information(scores: &Tensor<f64>) -> Result<f64> {
    fisher_information_with_se(scores).map(|(i, _)| i)
}

pub fn fisher_information_with_se(scores: &Tensor<f64>) -> Result<(f64, f64)> {
    if !scores.is_2d() || scores.rows() == 0 {
        return Err(Error::shape(format!("scores must be nonempty n×d, got {:?}", scores.shape())));
    }
    scores.assert_finite("fisher information scores")?;
    let terms: Vec<f64> =
        (0..scores.rows()).map(|i| scores.row(i).iter().map(|v| v * v).sum()).collect();
    Ok(mean_and_se(&terms))
}

/// I(g‖f) ≈ (1/n) Σ ‖s_g(x_i) − s_f(x_i)‖² with both score fields evaluated
/// at the same points x_i ~ f.
pub fn relative_fisher(scores_g: &Tensor<f64>, scores_f: &Tensor<f64>) -> Result<f64> {
    relative_fisher_with_se(scores_g, scores_f).map(|(r, _)| r)
}

pub fn relative_fisher_with_se(
    scores_g: &Tensor<f64>,
    scores_f: &Tensor<f64>,
) -> Result<(f64, f64)> {
    if scores_g.shape() != scores_f.shape() {
        return Err(Error::shape(format!(
            "score shapes differ: {:?} vs {:?}",
            scores_g.shape(),
            scores_f.shape()
        )));
    }
    if !scores_g.is_2d() || scores_g.rows() == 0 {
        return Err(Error::shape("scores must be nonempty n×d".to_string()));
    }
    let d = scores_g.cols();
    let terms: Vec<f64> = (0..scores_g.rows())
        .map(|i| {
            let (a, b) = (scores_g.row(i), scores_f.row(i));
            (0..d).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
        })
        .collect();
    Ok(mean_and_se(&terms))
}
