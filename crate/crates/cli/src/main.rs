//! `panel-ctmc`: fit, summarize and simulate the four-state panel model.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input, 2 estimation did
//! not converge, 3 degenerate model, 4 invalid configuration or arguments.

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod model;
mod render;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use panel_ctmc::estimation::ZeroCellPolicy;
use panel_ctmc::{Error, RateVector};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Input(_) => 1,
            CliError::Config(_) => 4,
            CliError::Core(e) => match e {
                Error::Parse { .. } | Error::EstimationInput(_) => 1,
                Error::NonConvergence { .. } => 2,
                Error::Degenerate(_)
                | Error::ZeroCell { .. }
                | Error::SingularHessian
                | Error::IllDefinedCell { .. }
                | Error::InternalConsistency(_) => 3,
                Error::NegativeRate { .. } | Error::InvalidTime(_) | Error::Invalid(_) => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "panel-ctmc", version, about = "Four-state Markov model for interval-censored panel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the intensities to count tables or raw visit records.
    Estimate(AnalysisArgs),
    /// Sojourn times, occupancy, expected counts and the limiting distribution.
    Summarize(AnalysisArgs),
    /// Absorption probabilities and expected times to absorption.
    Absorb(AnalysisArgs),
    /// Pearson chi-square of the observed tables against the fitted model.
    Gof(AnalysisArgs),
    /// Simulate a cohort and write its panel data.
    Simulate(SimulateArgs),
    /// Estimate, then summarize, absorb and test fit in one report.
    ReportAll(AnalysisArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ZeroCells {
    Reject,
    Correct,
}

impl From<ZeroCells> for ZeroCellPolicy {
    fn from(z: ZeroCells) -> Self {
        match z {
            ZeroCells::Reject => ZeroCellPolicy::Reject,
            ZeroCells::Correct => ZeroCellPolicy::Correct,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Count tables (`delta_t=<k>` blocks) or `subject,time,state` records.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fitted model JSON, or any report written with --output.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Rates `l12,l14,mu21,l23,l24`.
    #[arg(long, value_parser = model::parse_theta, allow_hyphen_values = true)]
    theta: Option<RateVector>,
    /// Write the structured JSON report here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// TOML analysis configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Significance level of the goodness-of-fit test.
    #[arg(long)]
    alpha: Option<f64>,
    /// Report times in years, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    horizons: Option<Vec<f64>>,
    /// Initial state distribution, four comma-separated probabilities.
    #[arg(long, value_parser = parse_four, allow_hyphen_values = true)]
    pi0: Option<[f64; 4]>,
    /// Initial cohort counts, four comma-separated values.
    #[arg(long, value_parser = parse_four, allow_hyphen_values = true)]
    u0: Option<[f64; 4]>,
    /// Use the exit-rate-only gradient for sojourn variances.
    #[arg(long)]
    strict_gradient: bool,
    /// Limiting-covariance direction vector; defaults to the limiting distribution.
    #[arg(long, value_parser = parse_four, allow_hyphen_values = true)]
    cvec: Option<[f64; 4]>,
    #[arg(long, value_enum)]
    zero_cells: Option<ZeroCells>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_parser = model::parse_theta, allow_hyphen_values = true)]
    theta: Option<RateVector>,
    #[arg(long, default_value_t = 1000)]
    subjects: usize,
    /// Annual visits at 0, 1, ..., years.
    #[arg(long, default_value_t = 10)]
    years: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability of missing each follow-up visit.
    #[arg(long, default_value_t = 0.0)]
    skip_prob: f64,
    /// Longest run of consecutive missed visits.
    #[arg(long, default_value_t = 2)]
    max_skip: usize,
    /// Probability of starting in state 1 rather than state 2.
    #[arg(long)]
    start_p1: Option<f64>,
    /// Write `subject,time,state` records instead of count tables.
    #[arg(long)]
    records: bool,
    /// Simulate on one thread.
    #[arg(long)]
    sequential: bool,
    /// Destination file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_four(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 comma-separated values, got {}", parts.len()));
    }
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
