//! Exact marginal log-likelihood of the stacked observations and its
//! gradient in the prior variances.
//!
//! With `y = vec(Y)` stacked time-major, `y ~ N(0, R_Y + sigma2 I)` where
//! `R_Y = B (I_K ⊗ diag gamma) B^T` and `B = (diag z ⊗ A) D~`. Everything here
//! is dense; the innovations form in [`log_likelihood_innovations`] is the
//! route for long horizons.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::em::kalman_filter;
use crate::error::{Error, Result};
use crate::model::{SystemModel, Theta};

/// Block lower-triangular `D~` with `(k, j)` block `D^(k-j)`, size Kn x Kn.
pub fn build_dtilde(model: &SystemModel) -> DMatrix<f64> {
    let (n, k) = (model.n, model.k);
    let mut powers = Vec::with_capacity(k);
    powers.push(DMatrix::<f64>::identity(n, n));
    for p in 1..k {
        powers.push(&model.d * &powers[p - 1]);
    }
    let mut dt = DMatrix::zeros(k * n, k * n);
    for row in 0..k {
        for col in 0..=row {
            dt.view_mut((row * n, col * n), (n, n))
                .copy_from(&powers[row - col]);
        }
    }
    dt
}

/// `B = (diag z ⊗ A) D~`, size Km x Kn. Column `k*n + i` maps input `i` at time `k`.
pub fn build_mixing(model: &SystemModel, z: &[u8]) -> DMatrix<f64> {
    let (n, m, k) = (model.n, model.m, model.k);
    let mut powers = Vec::with_capacity(k);
    powers.push(model.a.clone());
    for p in 1..k {
        powers.push(&powers[p - 1] * &model.d);
    }
    let mut b = DMatrix::zeros(k * m, k * n);
    for row in 0..k {
        if z[row] == 0 {
            continue;
        }
        for col in 0..=row {
            b.view_mut((row * m, col * n), (m, n))
                .copy_from(&powers[row - col]);
        }
    }
    b
}

/// `R_Y(theta)` with the factorization of `R_Y + sigma2 I` cached alongside.
#[derive(Debug, Clone)]
pub struct StackedCovariance {
    pub mixing: DMatrix<f64>,
    pub ry: DMatrix<f64>,
    pub sigma_total: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

impl StackedCovariance {
    /// `log |R_Y + sigma2 I|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `y^T (R_Y + sigma2 I)^{-1} y` via one triangular solve.
    pub fn quad_form(&self, y: &DVector<f64>) -> f64 {
        let l = self.chol.l();
        let v = l
            .solve_lower_triangular(y)
            .expect("cholesky factor has a positive diagonal");
        v.norm_squared()
    }
}

pub fn build_ry(model: &SystemModel, theta: &Theta) -> Result<StackedCovariance> {
    model.validate()?;
    theta.validate(model)?;
    let mixing = build_mixing(model, &theta.z);
    let mut scaled = mixing.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        col *= theta.gamma[c % model.n].sqrt();
    }
    let ry = &scaled * scaled.transpose();
    let mut sigma_total = ry.clone();
    for i in 0..sigma_total.nrows() {
        sigma_total[(i, i)] += model.sigma2;
    }
    let chol = Cholesky::new(sigma_total.clone())
        .ok_or(Error::NotPositiveDefinite("R_Y + sigma2 I"))?;
    Ok(StackedCovariance {
        mixing,
        ry,
        sigma_total,
        chol,
    })
}

/// `vec(Y)` stacked column by column.
pub fn stack_observations(model: &SystemModel, y: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.shape() != (model.m, model.k) {
        return Err(Error::mismatch(
            "Y",
            format!("{}x{}", model.m, model.k),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    Ok(DVector::from_column_slice(y.as_slice()))
}

pub fn log_likelihood(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<f64> {
    let yv = stack_observations(model, y)?;
    let cov = build_ry(model, theta)?;
    Ok(log_likelihood_with(&cov, &yv))
}

pub(crate) fn log_likelihood_with(cov: &StackedCovariance, yv: &DVector<f64>) -> f64 {
    let dim = yv.len() as f64;
    -0.5 * dim * (2.0 * PI).ln() - 0.5 * cov.log_det() - 0.5 * cov.quad_form(yv)
}

/// Prediction-error decomposition of the same likelihood, via the Kalman filter.
pub fn log_likelihood_innovations(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta: &Theta,
) -> Result<f64> {
    let fr = kalman_filter(model, y, theta)?;
    Ok(fr.log_likelihood())
}

/// `-(Km/2) log(2 pi sigma2)`: the likelihood never exceeds this.
pub fn likelihood_upper_bound(model: &SystemModel) -> f64 {
    -0.5 * (model.k * model.m) as f64 * (2.0 * PI * model.sigma2).ln()
}

/// Analytic `dL/dgamma_i = -1/2 tr(S^-1 M_i) + 1/2 y^T S^-1 M_i S^-1 y`.
pub fn grad_gamma(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<Vec<f64>> {
    let yv = stack_observations(model, y)?;
    let cov = build_ry(model, theta)?;
    Ok(grad_gamma_with(model, &cov, &yv))
}

pub(crate) fn grad_gamma_with(
    model: &SystemModel,
    cov: &StackedCovariance,
    yv: &DVector<f64>,
) -> Vec<f64> {
    let alpha = cov.chol.solve(yv);
    let whitened = cov
        .chol
        .l()
        .solve_lower_triangular(&cov.mixing)
        .expect("cholesky factor has a positive diagonal");
    let mut grad = vec![0.0; model.n];
    for (c, col) in cov.mixing.column_iter().enumerate() {
        let i = c % model.n;
        let trace_term = whitened.column(c).norm_squared();
        let proj = col.dot(&alpha);
        grad[i] += 0.5 * (proj * proj - trace_term);
    }
    grad
}

/// Finite-difference gradient of [`log_likelihood`]. Coordinate `i` uses step
/// `h * (1 + gamma_i)`: central where it stays inside `gamma >= 0`, forward otherwise.
pub fn grad_gamma_fd(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta: &Theta,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let mut grad = Vec::with_capacity(model.n);
    let at = |gamma: Vec<f64>| log_likelihood(model, y, &theta.with_gamma(gamma));
    for i in 0..theta.gamma.len() {
        let step = h * (1.0 + theta.gamma[i]);
        let mut plus = theta.gamma.clone();
        plus[i] += step;
        if theta.gamma[i] >= step {
            let mut minus = theta.gamma.clone();
            minus[i] -= step;
            grad.push((at(plus)? - at(minus)?) / (2.0 * step));
        } else {
            grad.push((at(plus)? - at(theta.gamma.clone())?) / step);
        }
    }
    Ok(grad)
}
