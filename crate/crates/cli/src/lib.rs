//! The `qtraj` command-line tool: configuration, orchestration and output.
//!
//! Exit codes: 0 pass, 1 quantitative failure or run-time error, 2 usage or
//! configuration error.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod examples;
pub mod output;

use config::{Format, Overrides};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// The run itself failed (exit 1).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Failed(m) => f.write_str(m),
        }
    }
}

impl From<qtraj_core::Error> for CliError {
    fn from(e: qtraj_core::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(
    name = "qtraj",
    version,
    about = "Disordered quantum trajectories: purification and dark-subspace experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `disorder.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    /// Worker threads. Never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check Kraus completeness at the configured disorder points.
    Validate,
    /// Sample trajectories and report purification diagnostics per point.
    Purify,
    /// Enumerate the outcome distribution exactly.
    Enumerate,
    /// Search for gray projections.
    Dark,
    /// Canned reproduction of one of the three worked examples.
    Example {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        id: u8,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            format: self.format.map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Jsonl => Format::Jsonl,
            }),
        }
    }
}

/// Runs a parsed command line and returns the process exit code. Summaries
/// and errors go to standard error; records go to `--out` or standard output.
pub fn run(cli: &Cli) -> i32 {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        // A second initialization (e.g. in tests) keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool, CliError> {
    let overrides = cli.overrides();
    if let Command::Example { id } = cli.command {
        return examples::run(id, &overrides);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    let experiment = config::load(path, &overrides)?;
    match cli.command {
        Command::Validate => commands::validate(&experiment),
        Command::Purify => commands::purify(&experiment),
        Command::Enumerate => commands::enumerate(&experiment),
        Command::Dark => commands::dark(&experiment),
        Command::Example { .. } => unreachable!("handled above"),
    }
}
