use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::filter::{check_inputs, kalman_filter, rts_smoother, FilterResult, Posterior};
use super::mstep::{estep_stats, fisher_gradient, gamma_term, mstep_gamma, SufficientStats};
use super::viterbi::{emission_scores, viterbi, z_objective, ScoreTable};
use crate::error::{Error, Result};
use crate::model::{SystemModel, Theta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop when `|L_{r+1} - L_r| <= tol_rel_l * (1 + |L_r|)` (and the gamma test holds).
    pub tol_rel_l: f64,
    /// Stop when `max_i |gamma_{r+1,i} - gamma_{r,i}| / gamma_{r,i} <= tol_gamma`.
    pub tol_gamma: f64,
    pub gamma_floor: f64,
    pub record_q: bool,
    /// Keep every iterate in the trace. Long scalar runs turn this off.
    pub record_theta: bool,
    /// Hold the pattern at its initial value and update only the variances.
    pub freeze_z: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 1000,
            tol_rel_l: 1e-10,
            tol_gamma: 1e-8,
            gamma_floor: 1e-12,
            record_q: true,
            record_theta: true,
            freeze_z: false,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.tol_rel_l > 0.0) || !(self.tol_gamma > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.gamma_floor >= 0.0) {
            return Err(Error::InvalidInput("gamma_floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One completed EM iteration `theta_r -> theta_{r+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub theta: Option<Theta>,
    /// `L(theta_r)`.
    pub log_likelihood: f64,
    /// `Q(theta_{r+1}; theta_r)`.
    pub q_next: Option<f64>,
    /// `Q(theta_r; theta_r)`.
    pub q_self: Option<f64>,
    /// `||grad_gamma L(theta_r)||_inf`.
    pub grad_inf_norm: f64,
    pub gamma_change: f64,
    pub z_hamming_change: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub records: Vec<IterRecord>,
    pub termination: Termination,
    pub theta_final: Theta,
    /// `L(theta_final)`.
    pub final_log_likelihood: f64,
}

impl EmTrace {
    /// `L(theta_0), ..., L(theta_R), L(theta_final)`.
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.log_likelihood)
            .chain(std::iter::once(self.final_log_likelihood))
            .collect()
    }
}

/// Everything the E-step produces under one parameter value.
#[derive(Debug, Clone)]
pub struct EStep {
    pub filter: FilterResult,
    pub posterior: Posterior,
    pub stats: SufficientStats,
    pub scores: ScoreTable,
}

impl EStep {
    pub fn run(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<Self> {
        let filter = kalman_filter(model, y, theta)?;
        let posterior = rts_smoother(model, &filter)?;
        let stats = estep_stats(model, &posterior);
        let scores = emission_scores(model, y, &posterior);
        Ok(EStep {
            filter,
            posterior,
            stats,
            scores,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.filter.log_likelihood()
    }

    /// `Q(theta; theta_ref)` where `self` was computed under `theta_ref`.
    pub fn q_value(&self, model: &SystemModel, theta: &Theta) -> f64 {
        z_objective(&self.scores, model, &theta.z) + gamma_term(&theta.gamma, &self.stats)
    }

    /// `G(theta_ref)`: both halves of the M-step from this one posterior.
    pub fn maximize(&self, model: &SystemModel, gamma_floor: f64) -> Theta {
        Theta {
            gamma: mstep_gamma(&self.stats, gamma_floor),
            z: viterbi(&self.scores, model),
        }
    }
}

/// `Q(theta; theta_ref) = E[log p(Y|X,z)] + log p(z) + E[log p(X; gamma)]`,
/// expectations under the smoothing posterior of `theta_ref`.
pub fn q_function(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta: &Theta,
    theta_ref: &Theta,
) -> Result<f64> {
    theta.validate(model)?;
    let es = EStep::run(model, y, theta_ref)?;
    Ok(es.q_value(model, theta))
}

/// One EM step `theta -> G(theta)`.
pub fn em_iterate(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta: &Theta,
    gamma_floor: f64,
) -> Result<Theta> {
    Ok(EStep::run(model, y, theta)?.maximize(model, gamma_floor))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest per-coordinate relative change; coordinates shrinking toward zero
/// keep this large, so a run only converges once every variance has settled.
pub fn relative_change(from: &[f64], to: &[f64]) -> f64 {
    from.iter()
        .zip(to)
        .map(|(&a, &b)| {
            let delta = (b - a).abs();
            if delta == 0.0 {
                0.0
            } else if a > 0.0 {
                delta / a
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn clamp_floor(theta: &Theta, floor: f64) -> Theta {
    theta.with_gamma(theta.gamma.iter().map(|g| g.max(floor)).collect())
}

pub fn run_em(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta0: &Theta,
    opts: &EmOptions,
) -> Result<EmTrace> {
    opts.validate()?;
    check_inputs(model, y, theta0)?;
    let mut theta = clamp_floor(theta0, opts.gamma_floor);
    let mut current = EStep::run(model, y, &theta)?;
    let mut records = Vec::new();
    let mut termination = Termination::MaxIters;

    for iter in 0..opts.max_iters {
        let started = Instant::now();
        let mut next = current.maximize(model, opts.gamma_floor);
        if opts.freeze_z {
            next.z.clone_from(&theta.z);
        }
        let (q_next, q_self) = if opts.record_q {
            (
                Some(current.q_value(model, &next)),
                Some(current.q_value(model, &theta)),
            )
        } else {
            (None, None)
        };
        let grad = fisher_gradient(&theta.gamma, &current.stats);
        let following = EStep::run(model, y, &next)?;

        let l = current.log_likelihood();
        let l_next = following.log_likelihood();
        if l_next < l - 1e-10 * (1.0 + l.abs()) {
            return Err(Error::NonMonotone {
                iter,
                before: l,
                after: l_next,
            });
        }
        let gamma_change = relative_change(&theta.gamma, &next.gamma);
        let z_hamming_change = next.z.iter().zip(&theta.z).filter(|(a, b)| a != b).count();

        records.push(IterRecord {
            iter,
            theta: opts.record_theta.then(|| theta.clone()),
            log_likelihood: l,
            q_next,
            q_self,
            grad_inf_norm: inf_norm(&grad),
            gamma_change,
            z_hamming_change,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        let converged = (l_next - l).abs() <= opts.tol_rel_l * (1.0 + l.abs())
            && gamma_change <= opts.tol_gamma
            && z_hamming_change == 0;
        theta = next;
        current = following;
        if converged {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(EmTrace {
        records,
        termination,
        final_log_likelihood: current.log_likelihood(),
        theta_final: theta,
    })
}
