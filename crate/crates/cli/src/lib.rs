//! Command-line front end: configuration, dispatch and result files.

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::num::NonZeroUsize;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "logspline", version, about = "Adaptive log-spline density estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Posterior summary of one model for a data file
    Fit(CommonArgs),
    /// Contraction-rate experiment over an n-grid
    Rate(CommonArgs),
    /// Index-posterior concentration experiment
    Select(CommonArgs),
    /// Bayes-factor drift between two models
    Bf(CommonArgs),
    /// Covering numbers, alpha-entropies and likelihood-ratio bound checks
    Entropy(CommonArgs),
    /// Run the property-check suite
    Verify(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    threads: Option<NonZeroUsize>,
}

impl Command {
    fn split(self) -> (CommandKind, CommonArgs) {
        match self {
            Command::Fit(a) => (CommandKind::Fit, a),
            Command::Rate(a) => (CommandKind::Rate, a),
            Command::Select(a) => (CommandKind::Select, a),
            Command::Bf(a) => (CommandKind::Bf, a),
            Command::Entropy(a) => (CommandKind::Entropy, a),
            Command::Verify(a) => (CommandKind::Verify, a),
        }
    }
}

fn dispatch(kind: CommandKind, args: CommonArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.get())
            .build()
            .map_err(|e| error::config_error("--threads", e.to_string()))?
            .install(|| commands::execute(kind, &cfg)),
        None => commands::execute(kind, &cfg),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on invalid input or runtime failure,
/// 2 when a property check fails.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (kind, args) = cli.command.split();
    match dispatch(kind, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            report_sources(&e);
            e.exit_code()
        }
    }
}

fn report_sources(e: &CliError) {
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}
