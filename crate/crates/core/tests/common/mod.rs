#![allow(dead_code)]

use ksbl_core::model::{random_model, simulate_dataset, stream_rng, RandomModelSpec, SimConfig, Stream};
use ksbl_core::{Dataset, SystemModel, Theta};
use ksbl_core::likelihood::{build_dtilde, build_mixing, stack_observations};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sparsity: usize,
}

pub struct Instance {
    pub model: SystemModel,
    pub data: Dataset,
    pub seed: u64,
}

impl Instance {
    pub fn y(&self) -> &DMatrix<f64> {
        &self.data.y
    }
}

pub fn instance(seed: u64, shape: Shape, sigma2: f64) -> Instance {
    let spec = RandomModelSpec {
        n: shape.n,
        m: shape.m,
        k: shape.k,
        sigma2,
        p0: 0.8,
        p1: 0.9,
        pi1: 0.5,
        spectral_radius: 0.9,
    };
    let model = random_model(&spec, &mut stream_rng(seed, Stream::Model)).unwrap();
    let cfg = SimConfig {
        sparsity: shape.sparsity,
        support: None,
        input_variance: 1.0,
        seed,
    };
    let data = simulate_dataset(&model, &cfg).unwrap();
    Instance { model, data, seed }
}

/// Small shapes cycling through n in 2..=5, m in 1..=3, K in 5..=10.
pub fn small_shape(seed: u64) -> Shape {
    Shape {
        n: 2 + (seed % 4) as usize,
        m: 1 + (seed % 3) as usize,
        k: 5 + (seed % 6) as usize,
        sparsity: 1 + (seed % 2) as usize,
    }
}

pub fn small_instance(seed: u64) -> Instance {
    instance(seed, small_shape(seed), 0.01)
}

/// Variances drawn log-uniformly from `[lo, hi]`.
pub fn random_gamma(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed ^ 0x9e37_79b9, Stream::Inputs);
    (0..n)
        .map(|_| (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp())
        .collect()
}

pub fn random_theta(inst: &Instance, lo: f64, hi: f64) -> Theta {
    Theta::new(
        random_gamma(inst.model.n, lo, hi, inst.seed),
        inst.data.zstar.clone(),
    )
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Posterior of the stacked state by direct Gaussian conditioning.
pub fn batch_posterior(model: &SystemModel, y: &DMatrix<f64>, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
    let n = model.n;
    let dt = build_dtilde(model);
    let b = build_mixing(model, &theta.z);
    let prior_u = DMatrix::from_fn(n * model.k, n * model.k, |i, j| if i == j { theta.gamma[i % n] } else { 0.0 });
    let cov_x = &dt * &prior_u * dt.transpose();
    let cov_xy = &dt * &prior_u * b.transpose();
    let mut cov_y = &b * &prior_u * b.transpose();
    for i in 0..cov_y.nrows() {
        cov_y[(i, i)] += model.sigma2;
    }
    let chol = cov_y.cholesky().expect("positive definite");
    let yv = stack_observations(model, y).unwrap();
    let mean = &cov_xy * chol.solve(&yv);
    let cov = &cov_x - &cov_xy * chol.solve(&cov_xy.transpose());
    (mean, cov)
}

