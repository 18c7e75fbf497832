//! Command-line front end: simulate datasets, run EM, check runs, compare with the oracle, sweep grids.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ksbl", version, about = "Sparse-input state estimation with missing outputs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and write it to a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate (or load) a dataset and run EM on it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the stacked output covariance at the final estimate.
        #[arg(long)]
        debug_dumps: bool,
    },
    /// Run the convergence checks on a finished run directory.
    Diagnose { run_dir: PathBuf },
    /// Compare a finished run against exhaustive search (small problems only).
    Oracle {
        run_dir: PathBuf,
        /// Also write the per-pattern table.
        #[arg(long)]
        debug_dumps: bool,
    },
    /// Run a grid of seeds, noise levels and sparsities in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Executes one command, printing a short summary to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let dir = commands::simulate(RunConfig::load(&config)?, out, seed)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Run { config, out, seed, debug_dumps } => {
            let s = commands::run(RunConfig::load(&config)?, out, seed, debug_dumps)?;
            println!(
                "{} after {} iterations: L = {}, nmse = {:.3e}, z accuracy = {:.3}",
                s.termination, s.iterations, s.final_l, s.metrics.nmse, s.metrics.z_accuracy
            );
        }
        Command::Diagnose { run_dir } => {
            let report = commands::diagnose(&run_dir)?;
            for c in &report.checks {
                let status = if c.skipped { "skip" } else if c.pass { "pass" } else { "FAIL" };
                println!("{status:4} {:<14} value {:.3e} threshold {:.3e}", c.name, c.value, c.threshold);
            }
            commands::require_verdict(&report)?;
        }
        Command::Oracle { run_dir, debug_dumps } => {
            let r = commands::oracle(&run_dir, debug_dumps)?;
            println!(
                "viterbi in argmax: {}; EM L = {}, best L = {}, gap = {:.3e}; z em {} ml {}",
                r.viterbi_in_argmax, r.em_l, r.ml_l, r.gap, r.z_em, r.z_ml
            );
        }
        Command::Sweep { config, out, jobs } => {
            let dir = commands::sweep(RunConfig::load(&config)?, out, jobs)?;
            println!("summary written to {}", dir.join(commands::SUMMARY_FILE).display());
        }
    }
    Ok(())
}
