//! Recovery metrics against simulated ground truth.

use ksbl_core::em::{kalman_filter, rts_smoother};
use ksbl_core::{Dataset, Result, SystemModel, Theta};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Variances at or below this fraction of the largest are treated as inactive.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `||X_hat - X||_F^2 / ||X||_F^2` with `X_hat` the smoothed means.
    pub nmse: f64,
    /// Fraction of time steps whose pattern matches the truth.
    pub z_accuracy: f64,
    pub support_true: Vec<usize>,
    pub support_estimated: Vec<usize>,
    pub support_f1: f64,
    pub support_exact: bool,
}

pub fn estimated_support(gamma: &[f64]) -> Vec<usize> {
    let max = gamma.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    (0..gamma.len()).filter(|&i| gamma[i] > SUPPORT_THRESHOLD * max).collect()
}

fn f1(truth: &[usize], est: &[usize]) -> f64 {
    if truth.is_empty() && est.is_empty() {
        return 1.0;
    }
    let hits = est.iter().filter(|i| truth.contains(i)).count() as f64;
    2.0 * hits / (truth.len() + est.len()) as f64
}

pub fn smoothed_states(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<DMatrix<f64>> {
    let post = rts_smoother(model, &kalman_filter(model, y, theta)?)?;
    Ok(DMatrix::from_columns(&post.means))
}

pub fn compute(model: &SystemModel, data: &Dataset, theta: &Theta) -> Result<Metrics> {
    let xhat = smoothed_states(model, &data.y, theta)?;
    let denom = data.x.norm_squared();
    let err = (&xhat - &data.x).norm_squared();
    let nmse = if denom > 0.0 { err / denom } else { err };
    let matches = theta.z.iter().zip(&data.zstar).filter(|(a, b)| a == b).count();
    let support_true = data.support();
    let support_estimated = estimated_support(&theta.gamma);
    Ok(Metrics {
        nmse,
        z_accuracy: matches as f64 / model.k as f64,
        support_f1: f1(&support_true, &support_estimated),
        support_exact: support_true == support_estimated,
        support_true,
        support_estimated,
    })
}
