//! E-step sufficient statistics and the closed-form variance update.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::filter::Posterior;
use crate::model::SystemModel;

/// Per-time posterior moments needed by the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `S_k = E[x_k x_k^T | Y]`.
    pub second: Vec<DMatrix<f64>>,
    /// `C_k = E[x_k x_{k-1}^T | Y]`, with `C_1 = 0`.
    pub cross: Vec<DMatrix<f64>>,
    /// `E[u_{k,i}^2 | Y]` as an n x K matrix.
    pub input_power: DMatrix<f64>,
}

impl SufficientStats {
    pub fn horizon(&self) -> usize {
        self.input_power.ncols()
    }

    /// `sum_k E[u_{k,i}^2]` for each `i`.
    pub fn input_power_sums(&self) -> Vec<f64> {
        self.input_power.row_iter().map(|r| r.sum()).collect()
    }
}

pub fn estep_stats(model: &SystemModel, post: &Posterior) -> SufficientStats {
    let kk = post.means.len();
    let n = model.n;
    let d = &model.d;
    let dt = d.transpose();
    let mut second = Vec::with_capacity(kk);
    let mut cross = Vec::with_capacity(kk);
    let mut input_power = DMatrix::zeros(n, kk);

    for k in 0..kk {
        let mean = &post.means[k];
        second.push(&post.covs[k] + mean * mean.transpose());
        // Cov(u_k) + E[u_k] E[u_k]^T, with u_k = x_k - D x_{k-1}. Working with the
        // centered moments avoids cancelling the large mean outer products.
        let (u_cov, u_mean) = if k == 0 {
            cross.push(DMatrix::zeros(n, n));
            (post.covs[0].clone(), mean.clone())
        } else {
            let prev = &post.means[k - 1];
            cross.push(&post.lag_one[k] + mean * prev.transpose());
            let lag_dt = &post.lag_one[k] * &dt;
            let cov = &post.covs[k] - &lag_dt - lag_dt.transpose() + d * &post.covs[k - 1] * &dt;
            (cov, mean - d * prev)
        };
        for i in 0..n {
            input_power[(i, k)] = u_cov[(i, i)] + u_mean[i] * u_mean[i];
        }
    }
    SufficientStats {
        second,
        cross,
        input_power,
    }
}

/// `gamma_i = max(floor, (1/K) sum_k E[u_{k,i}^2])`.
pub fn mstep_gamma(stats: &SufficientStats, gamma_floor: f64) -> Vec<f64> {
    let kk = stats.horizon() as f64;
    stats
        .input_power_sums()
        .into_iter()
        .map(|s| (s / kk).max(gamma_floor))
        .collect()
}

/// Expected log prior density of the inputs, `sum_{k,i} E[log N(u_{k,i}; 0, gamma_i)]`.
///
/// A zero variance paired with positive expected power yields `-inf`; a zero
/// variance with zero power is a point mass and yields `+inf`.
pub fn gamma_term(gamma: &[f64], stats: &SufficientStats) -> f64 {
    let kk = stats.horizon() as f64;
    gamma
        .iter()
        .zip(stats.input_power_sums())
        .map(|(&g, s)| gamma_term_coord(g, s, kk))
        .sum()
}

/// One coordinate of [`gamma_term`] given `sum_k E[u_{k,i}^2]`.
pub fn gamma_term_coord(g: f64, power_sum: f64, horizon: f64) -> f64 {
    if g <= 0.0 {
        return if power_sum > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    }
    -0.5 * horizon * (2.0 * PI * g).ln() - power_sum / (2.0 * g)
}

/// `dL/dgamma_i` through Fisher's identity: the gradient of `Q(.; theta)` at `theta`.
pub fn fisher_gradient(gamma: &[f64], stats: &SufficientStats) -> Vec<f64> {
    let kk = stats.horizon() as f64;
    gamma
        .iter()
        .zip(stats.input_power_sums())
        .map(|(&g, s)| (s - kk * g) / (2.0 * g * g))
        .collect()
}
