//! The EM iteration map: Kalman smoothing E-step, closed-form variance
//! update, and Viterbi decoding of the missing-data pattern.

mod driver;
mod filter;
mod mstep;
mod viterbi;

pub use driver::{
    em_iterate, q_function, relative_change, run_em, EStep, EmOptions, EmTrace, IterRecord, Termination,
};
pub use filter::{kalman_filter, rts_smoother, FilterResult, Posterior};
pub use mstep::{
    estep_stats, fisher_gradient, gamma_term, gamma_term_coord, mstep_gamma, SufficientStats,
};
pub use viterbi::{emission_scores, viterbi, z_objective, ScoreTable};
