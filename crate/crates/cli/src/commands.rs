use std::path::{Path, PathBuf};

use ksbl_core::diagnostics::{run_suite, DiagnosticsConfig, DiagnosticsReport};
use ksbl_core::em::{viterbi, z_objective, EStep};
use ksbl_core::io::{self, DIAGNOSTICS_FILE};
use ksbl_core::likelihood::build_ry;
use ksbl_core::oracle::{brute_force_z, exhaustive_ml_seeded, pattern_string, ExhaustiveOptions};
use ksbl_core::model::simulate_dataset;
use ksbl_core::{run_em, Dataset, SystemModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_DIAGNOSTICS, EXIT_IO};
use crate::metrics::{self, Metrics};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ERROR_FILE: &str = "error.json";
pub const RY_FILE: &str = "ry.csv";
pub const ORACLE_FILE: &str = "oracle.json";
pub const ORACLE_TABLE_FILE: &str = "oracle_table.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Provenance of a run directory. Deliberately free of timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
}

impl Manifest {
    fn new(command: &str, seed: u64) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    code: i32,
    message: &'a str,
}

/// Applies the command-line overrides and resolves the output directory.
pub fn resolve(mut cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<(RunConfig, PathBuf), CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.check()?;
    }
    let out = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set `out`"))?;
    Ok((cfg, out))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn write_header_files(cfg: &RunConfig, dir: &Path, command: &str) -> Result<(), CliError> {
    io::write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    io::write_json(&dir.join(MANIFEST_FILE), &Manifest::new(command, cfg.seed))?;
    Ok(())
}

/// Simulates from the config, or loads the configured dataset, and writes it into `dir`.
fn materialize(cfg: &RunConfig, dir: &Path) -> Result<(SystemModel, Dataset), CliError> {
    if let Some(path) = &cfg.dataset {
        let (manifest, data) = io::load_dataset(path)?;
        io::save_dataset(dir, &manifest.model, manifest.sim.as_ref(), &data)?;
        return Ok((manifest.model, data));
    }
    let sim = cfg
        .sim
        .as_ref()
        .ok_or_else(|| CliError::config("no dataset and no [sim] block to simulate one"))?;
    let model = cfg.build_model()?;
    let sim_cfg = cfg.sim_config(sim);
    let data = simulate_dataset(&model, &sim_cfg)?;
    io::save_dataset(dir, &model, Some(&sim_cfg), &data)?;
    Ok((model, data))
}

pub fn simulate(cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<PathBuf, CliError> {
    let (cfg, dir) = resolve(cfg, out, seed)?;
    create_dir(&dir)?;
    materialize(&cfg, &dir)?;
    write_header_files(&cfg, &dir, "simulate")?;
    Ok(dir)
}

/// Outcome of a `run`, as reported in sweep summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_l: f64,
    pub iterations: usize,
    pub termination: String,
    pub metrics: Metrics,
}

pub fn run(cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>, debug_dumps: bool) -> Result<RunSummary, CliError> {
    let (cfg, dir) = resolve(cfg, out, seed)?;
    create_dir(&dir)?;
    write_header_files(&cfg, &dir, "run")?;
    let (model, data) = materialize(&cfg, &dir)?;
    let theta0 = cfg.initial_theta(&model)?;
    let result = run_em(&model, &data.y, &theta0, &cfg.em.options())
        .and_then(|trace| metrics::compute(&model, &data, &trace.theta_final).map(|m| (trace, m)));
    let (trace, metrics) = match result {
        Ok(v) => v,
        Err(e) => {
            let err = CliError::from(e);
            if err.numerical {
                let rec = ErrorRecord { code: err.code, message: &err.message };
                io::write_json(&dir.join(ERROR_FILE), &rec)?;
            }
            return Err(err);
        }
    };
    io::save_trace(&dir, &trace)?;
    io::write_json(&dir.join(METRICS_FILE), &metrics)?;
    if debug_dumps {
        let cov = build_ry(&model, &trace.theta_final)?;
        io::write_matrix_csv(&dir.join(RY_FILE), &cov.ry)?;
    }
    Ok(RunSummary {
        final_l: trace.final_log_likelihood,
        iterations: trace.records.len(),
        termination: trace.termination.to_string(),
        metrics,
    })
}

/// Diagnostics and oracle settings stored with a run; defaults when the run has no config copy.
fn stored_settings(dir: &Path) -> Result<(DiagnosticsConfig, ExhaustiveOptions), CliError> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(Default::default());
    }
    let cfg = RunConfig::load(&path)?;
    Ok((cfg.diagnostics, cfg.oracle))
}

pub fn diagnose(dir: &Path) -> Result<DiagnosticsReport, CliError> {
    let (manifest, data) = io::load_dataset(dir)?;
    let trace = io::load_trace(dir)?;
    let (cfg, _) = stored_settings(dir)?;
    let report = run_suite(&manifest.model, &data.y, &trace, &cfg)?;
    report.save(&dir.join(DIAGNOSTICS_FILE))?;
    Ok(report)
}

/// Turns a failed verdict into the diagnostics exit code.
pub fn require_verdict(report: &DiagnosticsReport) -> Result<(), CliError> {
    if report.verdict {
        return Ok(());
    }
    let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
    Err(CliError::new(EXIT_DIAGNOSTICS, format!("failed checks: {}", names.join(", "))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// The Viterbi pattern at the final estimate attains the enumerated maximum.
    pub viterbi_in_argmax: bool,
    pub viterbi_objective: f64,
    pub best_objective: f64,
    pub em_l: f64,
    pub ml_l: f64,
    /// `ml_l - em_l`; positive when EM stopped short of the best pattern found.
    pub gap: f64,
    pub z_em: String,
    pub z_ml: String,
    pub z_match: bool,
}

pub fn oracle(dir: &Path, debug_dumps: bool) -> Result<OracleReport, CliError> {
    let (manifest, data) = io::load_dataset(dir)?;
    let model = &manifest.model;
    let trace = io::load_trace(dir)?;
    let theta = &trace.theta_final;
    // the joint search has the tighter size caps, so it runs first
    let (_, opts) = stored_settings(dir)?;
    let ml = exhaustive_ml_seeded(model, &data.y, &opts, std::slice::from_ref(theta))?;
    let es = EStep::run(model, &data.y, theta)?;
    let z_vit = viterbi(&es.scores, model);
    let decoded = brute_force_z(model, &data.y, theta)?;
    let report = OracleReport {
        viterbi_in_argmax: decoded.contains(&z_vit),
        viterbi_objective: z_objective(&es.scores, model, &z_vit),
        best_objective: decoded.best_value,
        em_l: trace.final_log_likelihood,
        ml_l: ml.l_best,
        gap: ml.l_best - trace.final_log_likelihood,
        z_em: pattern_string(&theta.z),
        z_ml: pattern_string(&ml.z_best),
        z_match: theta.z == ml.z_best,
    };
    io::write_json(&dir.join(ORACLE_FILE), &report)?;
    if debug_dumps {
        let objectives = decoded.table.unwrap_or_default();
        let rows: Vec<String> = ml
            .table
            .iter()
            .zip(&objectives)
            .map(|(entry, (_, obj))| format!("{},{},{}", pattern_string(&entry.z), obj, entry.log_likelihood))
            .collect();
        io::write_rows(&dir.join(ORACLE_TABLE_FILE), "z,objective,log_likelihood", &rows)?;
    }
    Ok(report)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub sparsity: usize,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        match self.snr_db {
            Some(snr) => format!("seed{}_snr{}_s{}", self.seed, snr, self.sparsity),
            None => format!("seed{}_s{}", self.seed, self.sparsity),
        }
    }
}

/// Expands the sweep grid; each cell's config is validated before anything runs.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<(Cell, RunConfig)>, CliError> {
    let grid = cfg.sweep.as_ref().ok_or_else(|| CliError::config("no [sweep] block"))?;
    let sim = cfg.sim.as_ref().ok_or_else(|| CliError::config("a sweep needs a [sim] block"))?;
    let seeds = if grid.seeds.is_empty() { vec![cfg.seed] } else { grid.seeds.clone() };
    let snrs: Vec<Option<f64>> = if grid.snr_db.is_empty() { vec![None] } else { grid.snr_db.iter().copied().map(Some).collect() };
    let sparsities = if grid.sparsity.is_empty() { vec![sim.sparsity] } else { grid.sparsity.clone() };
    let mut cells = Vec::new();
    for &seed in &seeds {
        for &snr_db in &snrs {
            for &sparsity in &sparsities {
                let mut c = cfg.clone();
                c.seed = seed;
                c.sweep = None;
                c.out = None;
                let sigma2 = c.build_model()?.sigma2;
                let s = c.sim.as_mut().expect("checked above");
                s.sparsity = sparsity;
                if let Some(db) = snr_db {
                    s.input_variance = sigma2 * 10f64.powf(db / 10.0);
                }
                if s.support.as_ref().is_some_and(|sup| sup.len() != sparsity) {
                    s.support = None;
                }
                c.check()?;
                cells.push((Cell { seed, snr_db, sparsity }, c));
            }
        }
    }
    Ok(cells)
}

pub const SUMMARY_HEADER: &str = "seed,snr_db,sparsity,final_L,iterations,termination,nmse,z_accuracy,support,verdict";

fn summary_row(cell: &Cell, outcome: &Result<(RunSummary, bool), CliError>) -> String {
    let snr = cell.snr_db.map(|v| v.to_string()).unwrap_or_default();
    match outcome {
        Ok((s, verdict)) => format!(
            "{},{},{},{},{},{},{},{},{},{}",
            cell.seed,
            snr,
            cell.sparsity,
            s.final_l,
            s.iterations,
            s.termination,
            s.metrics.nmse,
            s.metrics.z_accuracy,
            s.metrics.support_f1,
            if *verdict { "pass" } else { "fail" }
        ),
        Err(e) => format!("{},{},{},,,error({}),,,,error", cell.seed, snr, cell.sparsity, e.code),
    }
}

/// Runs every cell on a pool of `jobs` threads and writes `summary.csv`; rows follow grid order.
pub fn sweep(cfg: RunConfig, out: Option<PathBuf>, jobs: Option<usize>) -> Result<PathBuf, CliError> {
    let (cfg, dir) = resolve(cfg, out, None)?;
    let cells = sweep_cells(&cfg)?;
    create_dir(&dir)?;
    write_header_files(&cfg, &dir, "sweep")?;
    let threads = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<(RunSummary, bool), CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(cell, c)| {
                let cell_dir = dir.join(cell.dir_name());
                let summary = run(c.clone(), Some(cell_dir.clone()), None, false)?;
                let report = diagnose(&cell_dir)?;
                Ok((summary, report.verdict))
            })
            .collect()
    });
    if let Some(Err(e)) = outcomes.iter().find(|o| matches!(o, Err(e) if e.code == EXIT_IO)) {
        return Err(CliError::io(e.message.clone()));
    }
    let rows: Vec<String> = cells.iter().zip(&outcomes).map(|((cell, _), o)| summary_row(cell, o)).collect();
    io::write_rows(&dir.join(SUMMARY_FILE), SUMMARY_HEADER, &rows)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
seed = 1
[model]
kind = "random"
n = 3
m = 2
k = 5
sigma2 = 0.01
p0 = 0.8
p1 = 0.9
[sim]
sparsity = 1
[sweep]
seeds = [1, 2]
snr_db = [10.0, 20.0]
sparsity = [1, 2]
"#;

    #[test]
    fn sweep_grid_is_the_full_product() {
        let cfg = RunConfig::parse(SWEEP).unwrap();
        let cells = sweep_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 8);
        let (cell, c) = &cells[1];
        assert_eq!((cell.seed, cell.snr_db, cell.sparsity), (1, Some(10.0), 2));
        let sim = c.sim.as_ref().unwrap();
        assert_eq!(sim.sparsity, 2);
        assert!((sim.input_variance - 0.1).abs() < 1e-15);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn sweep_rejects_infeasible_cells() {
        let cfg = RunConfig::parse(&SWEEP.replace("sparsity = [1, 2]", "sparsity = [1, 4]")).unwrap();
        assert_eq!(sweep_cells(&cfg).unwrap_err().code, crate::error::EXIT_CONFIG);
    }

    #[test]
    fn empty_axes_fall_back_to_the_base_config() {
        let cfg = RunConfig::parse(&SWEEP.replace("seeds = [1, 2]\nsnr_db = [10.0, 20.0]\nsparsity = [1, 2]\n", "")).unwrap();
        let cells = sweep_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].0, Cell { seed: 1, snr_db: None, sparsity: 1 });
        assert_eq!(cells[0].0.dir_name(), "seed1_s1");
    }

    #[test]
    fn output_directory_is_required() {
        let cfg = RunConfig::parse(SWEEP).unwrap();
        assert!(resolve(cfg.clone(), None, None).is_err());
        let (c, dir) = resolve(cfg, Some("x".into()), Some(9)).unwrap();
        assert_eq!((c.seed, dir), (9, PathBuf::from("x")));
    }
}
