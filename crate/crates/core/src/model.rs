//! System model, parameter vector, and the dataset simulator.
//!
//! The generative model is
//!
//! ```text
//! x_k = D x_{k-1} + u_k,        x_0 = 0
//! y_k = z_k A x_k + w_k,        w_k ~ N(0, sigma2 I_m)
//! ```
//!
//! with jointly sparse inputs `u_k` (one support shared by all `k`) and a
//! sticky two-state Markov chain on the observation indicator `z_k`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Known system: dynamics, output map, noise level and missing-data chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    /// State transition matrix, n x n.
    #[serde(with = "crate::io::matrix_rows")]
    pub d: DMatrix<f64>,
    /// Output matrix, m x n.
    #[serde(with = "crate::io::matrix_rows")]
    pub a: DMatrix<f64>,
    /// Observation noise variance.
    pub sigma2: f64,
    /// P{z_k = 0 | z_{k-1} = 0}.
    pub p0: f64,
    /// P{z_k = 1 | z_{k-1} = 1}.
    pub p1: f64,
    /// P{z_1 = 1}.
    #[serde(default = "default_pi1")]
    pub pi1: f64,
    pub n: usize,
    pub m: usize,
    /// Horizon length K.
    pub k: usize,
}

fn default_pi1() -> f64 {
    0.5
}

impl SystemModel {
    pub fn new(
        d: DMatrix<f64>,
        a: DMatrix<f64>,
        sigma2: f64,
        p0: f64,
        p1: f64,
        pi1: f64,
        k: usize,
    ) -> Result<Self> {
        let model = SystemModel {
            n: d.nrows(),
            m: a.nrows(),
            d,
            a,
            sigma2,
            p0,
            p1,
            pi1,
            k,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "state dimension must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("m", "output dimension must be at least 1"));
        }
        if self.k == 0 {
            return Err(invalid("k", "horizon must be at least 1"));
        }
        if self.d.shape() != (self.n, self.n) {
            return Err(Error::mismatch(
                "D",
                format!("{0}x{0}", self.n),
                format!("{}x{}", self.d.nrows(), self.d.ncols()),
            ));
        }
        if self.a.shape() != (self.m, self.n) {
            return Err(Error::mismatch(
                "A",
                format!("{}x{}", self.m, self.n),
                format!("{}x{}", self.a.nrows(), self.a.ncols()),
            ));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(invalid("sigma2", "sigma2 must be positive"));
        }
        for (field, p) in [("p0", self.p0), ("p1", self.p1), ("pi1", self.pi1)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, format!("probability {p} outside [0, 1]")));
            }
        }
        if self.d.iter().chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("D/A", "matrix entries must be finite"));
        }
        Ok(())
    }

    /// Log-probability of a transition `from -> to` of the missing-data chain.
    pub fn log_transition(&self, from: u8, to: u8) -> f64 {
        let stay = if from == 1 { self.p1 } else { self.p0 };
        if from == to {
            stay.ln()
        } else {
            (1.0 - stay).ln()
        }
    }

    pub fn log_initial(&self, z1: u8) -> f64 {
        if z1 == 1 {
            self.pi1.ln()
        } else {
            (1.0 - self.pi1).ln()
        }
    }

    /// log p(z) under the Markov chain; may be `-inf` for degenerate chains.
    pub fn log_prior_z(&self, z: &[u8]) -> f64 {
        let Some(&first) = z.first() else {
            return 0.0;
        };
        let mut lp = self.log_initial(first);
        for w in z.windows(2) {
            lp += self.log_transition(w[0], w[1]);
        }
        lp
    }
}

/// Free-function form of [`SystemModel::validate`].
pub fn validate_model(model: &SystemModel) -> Result<()> {
    model.validate()
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidModel {
        field,
        reason: reason.into(),
    }
}

/// Mixed parameter: continuous prior variances and the binary missing pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub gamma: Vec<f64>,
    pub z: Vec<u8>,
}

impl Theta {
    pub fn new(gamma: Vec<f64>, z: Vec<u8>) -> Self {
        Theta { gamma, z }
    }

    /// `gamma = g * 1`, `z = 1`: "nothing missing".
    pub fn uniform(model: &SystemModel, g: f64) -> Self {
        Theta {
            gamma: vec![g; model.n],
            z: vec![1; model.k],
        }
    }

    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        if self.gamma.len() != model.n {
            return Err(Error::mismatch("gamma", model.n, self.gamma.len()));
        }
        if self.z.len() != model.k {
            return Err(Error::mismatch("z", model.k, self.z.len()));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma entries must be finite and nonnegative, found {g}"
            )));
        }
        if let Some(z) = self.z.iter().find(|z| **z > 1) {
            return Err(Error::InvalidInput(format!("z entries must be 0 or 1, found {z}")));
        }
        Ok(())
    }

    pub fn with_gamma(&self, gamma: Vec<f64>) -> Self {
        Theta {
            gamma,
            z: self.z.clone(),
        }
    }
}

/// Input-generation settings for the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of active input rows.
    pub sparsity: usize,
    /// Explicit support; overrides the random draw when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    pub input_variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        if self.sparsity > model.n {
            return Err(Error::InvalidInput(format!(
                "sparsity {} exceeds state dimension {}",
                self.sparsity, model.n
            )));
        }
        if !(self.input_variance >= 0.0) || !self.input_variance.is_finite() {
            return Err(Error::InvalidInput(
                "input_variance must be finite and nonnegative".into(),
            ));
        }
        if let Some(support) = &self.support {
            if support.len() != self.sparsity {
                return Err(Error::InvalidInput(format!(
                    "support has {} entries but sparsity is {}",
                    support.len(),
                    self.sparsity
                )));
            }
            let mut sorted = support.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != support.len() || sorted.last().is_some_and(|&i| i >= model.n) {
                return Err(Error::InvalidInput(
                    "support must hold distinct indices below n".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Simulated ground truth and observations. Column `k` of each matrix is time `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub zstar: Vec<u8>,
    pub y: DMatrix<f64>,
    pub seed: u64,
}

impl Dataset {
    /// Rows of `U` that are not identically zero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.u.nrows())
            .filter(|&i| self.u.row(i).iter().any(|v| *v != 0.0))
            .collect()
    }
}

/// Active inputs together with the support they were drawn on.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInputs {
    pub u: DMatrix<f64>,
    pub support: Vec<usize>,
}

/// Independent sub-streams of one simulation seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Support = 0,
    Inputs = 1,
    Missing = 2,
    Noise = 3,
    Model = 4,
}

/// A ChaCha generator positioned on the given sub-stream of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Draws the missing-data indicator from the two-state chain.
pub fn simulate_missing<R: Rng + ?Sized>(model: &SystemModel, rng: &mut R) -> Result<Vec<u8>> {
    model.validate()?;
    let mut z = Vec::with_capacity(model.k);
    let mut prev = u8::from(rng.random::<f64>() < model.pi1);
    z.push(prev);
    for _ in 1..model.k {
        let stay = if prev == 1 { model.p1 } else { model.p0 };
        if rng.random::<f64>() >= stay {
            prev = 1 - prev;
        }
        z.push(prev);
    }
    Ok(z)
}

/// Draws jointly sparse inputs: `sparsity` active rows, i.i.d. Gaussian entries.
pub fn simulate_inputs<R: Rng + ?Sized>(
    model: &SystemModel,
    cfg: &SimConfig,
    support_rng: &mut R,
    value_rng: &mut R,
) -> Result<SparseInputs> {
    model.validate()?;
    cfg.validate(model)?;
    let mut support = match &cfg.support {
        Some(s) => s.clone(),
        None => index::sample(support_rng, model.n, cfg.sparsity).into_vec(),
    };
    support.sort_unstable();

    let sd = cfg.input_variance.sqrt();
    let mut u = DMatrix::zeros(model.n, model.k);
    for &i in &support {
        for k in 0..model.k {
            let v: f64 = StandardNormal.sample(value_rng);
            u[(i, k)] = sd * v;
        }
    }
    Ok(SparseInputs { u, support })
}

/// Runs the state recursion from `x_0 = 0` and adds observation noise.
pub fn simulate<R: Rng + ?Sized>(
    model: &SystemModel,
    u: &DMatrix<f64>,
    zstar: &[u8],
    noise_rng: &mut R,
) -> Result<Dataset> {
    model.validate()?;
    if u.shape() != (model.n, model.k) {
        return Err(Error::mismatch(
            "U",
            format!("{}x{}", model.n, model.k),
            format!("{}x{}", u.nrows(), u.ncols()),
        ));
    }
    if zstar.len() != model.k {
        return Err(Error::mismatch("zstar", model.k, zstar.len()));
    }
    if zstar.iter().any(|z| *z > 1) {
        return Err(Error::InvalidInput("zstar entries must be 0 or 1".into()));
    }

    let sd = model.sigma2.sqrt();
    let mut x = DMatrix::zeros(model.n, model.k);
    let mut y = DMatrix::zeros(model.m, model.k);
    let mut prev = DVector::zeros(model.n);
    for k in 0..model.k {
        let xk = &model.d * &prev + u.column(k);
        x.set_column(k, &xk);
        let signal = if zstar[k] == 1 {
            &model.a * &xk
        } else {
            DVector::zeros(model.m)
        };
        for j in 0..model.m {
            let w: f64 = StandardNormal.sample(noise_rng);
            y[(j, k)] = signal[j] + sd * w;
        }
        prev = xk;
    }
    Ok(Dataset {
        x,
        u: u.clone(),
        zstar: zstar.to_vec(),
        y,
        seed: 0,
    })
}

/// Full simulation from `cfg.seed`, each component on its own sub-stream.
pub fn simulate_dataset(model: &SystemModel, cfg: &SimConfig) -> Result<Dataset> {
    let mut support_rng = stream_rng(cfg.seed, Stream::Support);
    let mut value_rng = stream_rng(cfg.seed, Stream::Inputs);
    let inputs = simulate_inputs(model, cfg, &mut support_rng, &mut value_rng)?;
    let zstar = simulate_missing(model, &mut stream_rng(cfg.seed, Stream::Missing))?;
    let mut ds = simulate(
        model,
        &inputs.u,
        &zstar,
        &mut stream_rng(cfg.seed, Stream::Noise),
    )?;
    ds.seed = cfg.seed;
    Ok(ds)
}

/// Shape and noise settings for [`random_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomModelSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sigma2: f64,
    pub p0: f64,
    pub p1: f64,
    #[serde(default = "default_pi1")]
    pub pi1: f64,
    /// Upper bound on the spectral radius of D (enforced through the 2-norm).
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
}

fn default_radius() -> f64 {
    0.9
}

/// Draws a stable Gaussian `D` and an `A` with `N(0, 1/m)` entries.
pub fn random_model<R: Rng + ?Sized>(spec: &RandomModelSpec, rng: &mut R) -> Result<SystemModel> {
    if spec.n == 0 || spec.m == 0 {
        return Err(invalid("n/m", "dimensions must be at least 1"));
    }
    if !(spec.spectral_radius >= 0.0) {
        return Err(invalid("spectral_radius", "must be nonnegative"));
    }
    let mut draw = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
    };
    let mut d = draw(spec.n, spec.n, 1.0);
    let a = draw(spec.m, spec.n, 1.0 / (spec.m as f64).sqrt());
    let norm = d.singular_values().max();
    if norm > 0.0 {
        d *= spec.spectral_radius / norm;
    }
    SystemModel::new(d, a, spec.sigma2, spec.p0, spec.p1, spec.pi1, spec.k)
}
