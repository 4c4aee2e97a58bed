//! Command-line harness: configuration, dataset generation, training,
//! evaluation, sampling and the diagnostic subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ncml_core::SdeKind;

use crate::commands::Run;
use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;

pub use error::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "ncml", version, about = "Noise-conditional maximum likelihood experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_sde)]
    pub sde: Option<SdeKind>,
    /// Corruption probability for the sanity test.
    #[arg(long, global = true)]
    pub pi: Option<f64>,
    /// Start scale of two-phase sampling.
    #[arg(long, global = true)]
    pub t_start: Option<f64>,
    /// Training steps for `train`, reverse-SDE steps otherwise.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Class label for conditional sampling.
    #[arg(long, global = true)]
    pub class: Option<usize>,
    /// Model checkpoint to load.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset to a grid file.
    Generate,
    Train,
    /// Mean bits per dimension over the sanity t grid.
    EvalNll,
    /// Δ log p between clean and ±1-corrupted data over the t grid.
    SanityTest,
    /// Perturbation kernel statistics over t.
    SdeStats,
    Sample,
    /// Complete raster prefixes of evaluation images.
    Complete,
    CalibrateHorizon,
    /// Refine exact mixture samples with the analytic score and check the
    /// recovered weights and means.
    VerifyOracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::EvalNll => "eval-nll",
            Command::SanityTest => "sanity-test",
            Command::SdeStats => "sde-stats",
            Command::Sample => "sample",
            Command::Complete => "complete",
            Command::CalibrateHorizon => "calibrate-horizon",
            Command::VerifyOracle => "verify-oracle",
        }
    }
}

fn parse_sde(s: &str) -> Result<SdeKind, String> {
    s.parse().map_err(|e: ncml_core::Error| e.to_string())
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            sde: self.sde,
            pi: self.pi,
            t_start: self.t_start,
            steps: self.steps,
            class: self.class,
            checkpoint: self.checkpoint.clone(),
        }
    }

    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&self.overrides(), self.command == Command::Train);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Caps rayon's pool at `NCML_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NCML_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("NCML_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

/// Runs one subcommand and returns its stdout summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    let run = Run::new(cfg, cli.command.name())?;
    let result = match cli.command {
        Command::Generate => commands::generate(&run),
        Command::Train => commands::train_cmd(&run),
        Command::EvalNll => commands::eval_nll(&run),
        Command::SanityTest => commands::sanity_test(&run),
        Command::SdeStats => commands::sde_stats(&run),
        Command::Sample => commands::sample(&run),
        Command::Complete => commands::complete(&run),
        Command::CalibrateHorizon => commands::calibrate(&run),
        Command::VerifyOracle => commands::verify_oracle(&run),
    };
    match &result {
        Ok(_) => run.log("ok"),
        Err(e) => run.log(&format!("error {}", e.code)),
    }
    result
}
