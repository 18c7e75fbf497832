//! State estimation for linear systems with jointly sparse inputs and bursty
//! missing outputs, by expectation-maximization over a mixed continuous
//! (prior variances) and discrete (missing pattern) parameter.
//!
//! Modules:
//! - [`model`]: system description, parameter vector, simulator.
//! - [`likelihood`]: dense marginal log-likelihood and its gradient.
//! - [`em`]: Kalman/RTS E-step, variance update, Viterbi decoding, EM driver.
//! - [`diagnostics`]: executable convergence checks on finished runs.
//! - [`oracle`]: exhaustive references for the discrete and continuous updates.
//! - [`io`]: file formats shared with the command-line front end.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod oracle;

pub use em::{em_iterate, run_em, EmOptions, EmTrace, Posterior, Termination};
pub use error::{Error, Result};
pub use likelihood::{grad_gamma, log_likelihood, log_likelihood_innovations};
pub use model::{Dataset, SimConfig, SystemModel, Theta};
