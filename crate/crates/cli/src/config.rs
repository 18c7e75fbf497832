//! TOML run configuration.

use std::path::{Path, PathBuf};

use ksbl_core::diagnostics::DiagnosticsConfig;
use ksbl_core::oracle::ExhaustiveOptions;
use ksbl_core::model::{random_model, stream_rng, RandomModelSpec, Stream};
use ksbl_core::{EmOptions, SimConfig, SystemModel, Theta};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Required unless `dataset` is given; a dataset carries its own model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimBlock>,
    /// Existing dataset directory; used instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub em: EmBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Search budget for the `oracle` command.
    #[serde(default)]
    pub oracle: ExhaustiveOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBlock {
    Random(RandomBlock),
    Explicit(ExplicitBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBlock {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sigma2: f64,
    pub p0: f64,
    pub p1: f64,
    #[serde(default = "half")]
    pub pi1: f64,
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
    /// Seed for drawing D and A; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitBlock {
    pub d: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub p0: f64,
    pub p1: f64,
    #[serde(default = "half")]
    pub pi1: f64,
    pub k: usize,
}

fn half() -> f64 {
    0.5
}

fn default_radius() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub sparsity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub input_variance: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaInit {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZInit {
    Named(ZPreset),
    Vector(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPreset {
    Ones,
    Zeros,
}

/// EM settings; the fields mirror [`EmOptions`] plus the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmBlock {
    pub max_iters: usize,
    pub tol_rel_l: f64,
    pub tol_gamma: f64,
    pub gamma_floor: f64,
    pub record_q: bool,
    pub freeze_z: bool,
    pub init_gamma: GammaInit,
    pub init_z: ZInit,
}

impl Default for EmBlock {
    fn default() -> Self {
        let o = EmOptions::default();
        EmBlock {
            max_iters: o.max_iters,
            tol_rel_l: o.tol_rel_l,
            tol_gamma: o.tol_gamma,
            gamma_floor: o.gamma_floor,
            record_q: o.record_q,
            freeze_z: o.freeze_z,
            init_gamma: GammaInit::Scalar(1.0),
            init_z: ZInit::Named(ZPreset::Ones),
        }
    }
}

impl EmBlock {
    /// Iterates are not written to disk, so they are not kept in memory either.
    pub fn options(&self) -> EmOptions {
        EmOptions {
            max_iters: self.max_iters,
            tol_rel_l: self.tol_rel_l,
            tol_gamma: self.tol_gamma,
            gamma_floor: self.gamma_floor,
            record_q: self.record_q,
            record_theta: false,
            freeze_z: self.freeze_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Input-to-noise variance ratios in dB; each sets `input_variance = sigma2 * 10^(snr/10)`.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub sparsity: Vec<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates everything that can be checked before any data exists.
    pub fn check(&self) -> Result<(), CliError> {
        self.em.options().validate().map_err(CliError::from_config)?;
        if self.model.is_none() && self.dataset.is_none() {
            return Err(CliError::config("either [model] or dataset must be given"));
        }
        if self.model.is_some() && self.dataset.is_some() {
            return Err(CliError::config("[model] and dataset are mutually exclusive"));
        }
        if self.dataset.is_some() {
            return Ok(());
        }
        let model = self.build_model()?;
        if let Some(sim) = &self.sim {
            self.sim_config(sim).validate(&model).map_err(CliError::from_config)?;
        }
        self.initial_theta(&model)?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<SystemModel, CliError> {
        let Some(block) = &self.model else {
            return Err(CliError::config("no [model] block"));
        };
        match block {
            ModelBlock::Random(r) => {
                let spec = RandomModelSpec {
                    n: r.n,
                    m: r.m,
                    k: r.k,
                    sigma2: r.sigma2,
                    p0: r.p0,
                    p1: r.p1,
                    pi1: r.pi1,
                    spectral_radius: r.spectral_radius,
                };
                let mut rng = stream_rng(r.seed.unwrap_or(self.seed), Stream::Model);
                random_model(&spec, &mut rng).map_err(CliError::from_config)
            }
            ModelBlock::Explicit(e) => {
                let d = matrix(&e.d, "model.d")?;
                let a = matrix(&e.a, "model.a")?;
                SystemModel::new(d, a, e.sigma2, e.p0, e.p1, e.pi1, e.k).map_err(CliError::from_config)
            }
        }
    }

    pub fn sim_config(&self, sim: &SimBlock) -> SimConfig {
        SimConfig {
            sparsity: sim.sparsity,
            support: sim.support.clone(),
            input_variance: sim.input_variance,
            seed: self.seed,
        }
    }

    pub fn initial_theta(&self, model: &SystemModel) -> Result<Theta, CliError> {
        let gamma = match &self.em.init_gamma {
            GammaInit::Scalar(g) => vec![*g; model.n],
            GammaInit::Vector(v) => v.clone(),
        };
        let z = match &self.em.init_z {
            ZInit::Named(ZPreset::Ones) => vec![1; model.k],
            ZInit::Named(ZPreset::Zeros) => vec![0; model.k],
            ZInit::Vector(v) => v.clone(),
        };
        let theta = Theta::new(gamma, z);
        theta
            .validate(model)
            .map_err(|e| CliError::config(format!("em initialization: {e}")))?;
        Ok(theta)
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::config(format!("{what}: expected a non-empty rectangular array of rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}
