//! Decoding of the missing-data pattern: expected emission scores under the
//! smoothed posterior plus a two-state Viterbi pass over the Markov prior.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::filter::Posterior;
use crate::model::SystemModel;

/// `scores[k][s]` is `E[log p(y_k | x_k, z_k = s)]` under the posterior.
pub type ScoreTable = Vec<[f64; 2]>;

pub fn emission_scores(model: &SystemModel, y: &DMatrix<f64>, post: &Posterior) -> ScoreTable {
    let c = -0.5 * model.m as f64 * (2.0 * PI * model.sigma2).ln();
    let two_s2 = 2.0 * model.sigma2;
    (0..post.means.len())
        .map(|k| {
            let yk = y.column(k);
            let absent = c - yk.norm_squared() / two_s2;
            // ||y||^2 - 2 y^T A x + tr(A^T A S) = ||y - A x||^2 + tr(A P A^T)
            let resid = yk - &model.a * &post.means[k];
            let spread = (&model.a * &post.covs[k] * model.a.transpose()).trace();
            let present = c - (resid.norm_squared() + spread) / two_s2;
            [absent, present]
        })
        .collect()
}

/// Score of one pattern: emissions plus `log p(z)`.
pub fn z_objective(scores: &[[f64; 2]], model: &SystemModel, z: &[u8]) -> f64 {
    let emissions: f64 = scores
        .iter()
        .zip(z)
        .map(|(s, &zk)| s[zk as usize])
        .sum();
    emissions + model.log_prior_z(z)
}

/// Maximizer of [`z_objective`] by dynamic programming. Ties resolve to `z_k = 1`.
pub fn viterbi(scores: &[[f64; 2]], model: &SystemModel) -> Vec<u8> {
    let kk = scores.len();
    if kk == 0 {
        return Vec::new();
    }
    let mut delta = [
        model.log_initial(0) + scores[0][0],
        model.log_initial(1) + scores[0][1],
    ];
    let mut back = vec![[0u8; 2]; kk];
    for k in 1..kk {
        let mut next = [f64::NEG_INFINITY; 2];
        for to in 0..2u8 {
            let via0 = delta[0] + model.log_transition(0, to);
            let via1 = delta[1] + model.log_transition(1, to);
            let (best, from) = if via1 >= via0 { (via1, 1) } else { (via0, 0) };
            next[to as usize] = best + scores[k][to as usize];
            back[k][to as usize] = from;
        }
        delta = next;
    }
    let mut z = vec![0u8; kk];
    z[kk - 1] = u8::from(delta[1] >= delta[0]);
    for k in (1..kk).rev() {
        z[k - 1] = back[k][z[k] as usize];
    }
    z
}
