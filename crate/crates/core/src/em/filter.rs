//! Forward Kalman filter and Rauch-Tung-Striebel smoother for the model
//! `x_k = D x_{k-1} + u_k`, `u_k ~ N(0, diag gamma)`, `y_k = z_k A x_k + w_k`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{SystemModel, Theta};

/// Forward-pass moments for `k = 1..K` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub pred_means: Vec<DVector<f64>>,
    pub pred_covs: Vec<DMatrix<f64>>,
    pub filt_means: Vec<DVector<f64>>,
    pub filt_covs: Vec<DMatrix<f64>>,
    /// Log-density of `y_k` given `y_1..y_{k-1}`.
    pub step_loglik: Vec<f64>,
    /// Kalman gains; zero on steps without a measurement update.
    pub gains: Vec<DMatrix<f64>>,
}

impl FilterResult {
    pub fn log_likelihood(&self) -> f64 {
        self.step_loglik.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.filt_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filt_means.is_empty()
    }
}

/// Smoothed moments given all `K` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov(x_k, x_{k-1} | Y)`; entry 0 is zero because `x_0 = 0` is known.
    pub lag_one: Vec<DMatrix<f64>>,
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

pub(crate) fn check_inputs(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<()> {
    model.validate()?;
    theta.validate(model)?;
    if y.shape() != (model.m, model.k) {
        return Err(Error::mismatch(
            "Y",
            format!("{}x{}", model.m, model.k),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    Ok(())
}

pub fn kalman_filter(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> Result<FilterResult> {
    check_inputs(model, y, theta)?;
    let (n, m, kk) = (model.n, model.m, model.k);
    let process = DMatrix::from_diagonal(&DVector::from_column_slice(&theta.gamma));
    let a = &model.a;
    let at = a.transpose();
    let noise_const = m as f64 * (2.0 * PI * model.sigma2).ln();

    let mut out = FilterResult {
        pred_means: Vec::with_capacity(kk),
        pred_covs: Vec::with_capacity(kk),
        filt_means: Vec::with_capacity(kk),
        filt_covs: Vec::with_capacity(kk),
        step_loglik: Vec::with_capacity(kk),
        gains: Vec::with_capacity(kk),
    };

    for k in 0..kk {
        let (xp, mut pp) = match (out.filt_means.last(), out.filt_covs.last()) {
            (Some(xf), Some(pf)) => (
                &model.d * xf,
                &model.d * pf * model.d.transpose() + &process,
            ),
            _ => (DVector::zeros(n), process.clone()),
        };
        symmetrize(&mut pp);
        let yk = y.column(k).into_owned();

        if theta.z[k] == 1 {
            let mut s = a * &pp * &at;
            for i in 0..m {
                s[(i, i)] += model.sigma2;
            }
            let chol = Cholesky::new(s).ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
            let innov = &yk - a * &xp;
            let gain = chol.solve(&(a * &pp)).transpose();
            let xf = &xp + &gain * &innov;
            // Joseph form keeps the update PSD.
            let ika = DMatrix::<f64>::identity(n, n) - &gain * a;
            let mut pf = &ika * &pp * ika.transpose() + (&gain * gain.transpose()) * model.sigma2;
            symmetrize(&mut pf);

            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let maha = innov.dot(&chol.solve(&innov));
            out.step_loglik
                .push(-0.5 * (m as f64 * (2.0 * PI).ln() + log_det + maha));
            out.filt_means.push(xf);
            out.filt_covs.push(pf);
            out.gains.push(gain);
        } else {
            out.step_loglik
                .push(-0.5 * (noise_const + yk.norm_squared() / model.sigma2));
            out.filt_means.push(xp.clone());
            out.filt_covs.push(pp.clone());
            out.gains.push(DMatrix::zeros(n, m));
        }
        out.pred_means.push(xp);
        out.pred_covs.push(pp);
    }
    Ok(out)
}

pub fn rts_smoother(model: &SystemModel, fr: &FilterResult) -> Result<Posterior> {
    let kk = fr.len();
    if kk == 0 {
        return Err(Error::InvalidInput("empty filter result".into()));
    }
    let n = model.n;
    let mut means = fr.filt_means.clone();
    let mut covs = fr.filt_covs.clone();
    let mut lag_one = vec![DMatrix::zeros(n, n); kk];

    for k in (0..kk - 1).rev() {
        let ppred = &fr.pred_covs[k + 1];
        let chol = Cholesky::new(ppred.clone())
            .ok_or(Error::NotPositiveDefinite("predicted covariance in smoother gain"))?;
        // J = P_{k|k} D^T P_{k+1|k}^{-1}
        let j = chol.solve(&(&model.d * &fr.filt_covs[k])).transpose();
        let mean = &fr.filt_means[k] + &j * (&means[k + 1] - &fr.pred_means[k + 1]);
        let mut cov = &fr.filt_covs[k] + &j * (&covs[k + 1] - ppred) * j.transpose();
        symmetrize(&mut cov);
        lag_one[k + 1] = &covs[k + 1] * j.transpose();
        means[k] = mean;
        covs[k] = cov;
    }
    Ok(Posterior {
        means,
        covs,
        lag_one,
    })
}
