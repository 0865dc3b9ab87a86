//! `mixb2dppca`: train, apply and benchmark mixtures of bilateral-projection
//! 2D PPCA and the GLRAM / mixture-of-PPCA baselines.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<mixb2d::Error> for CliError {
    fn from(e: mixb2d::Error) -> Self {
        use mixb2d::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            E::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<mixb2d::data::DataError> for CliError {
    fn from(e: mixb2d::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<mixb2d::persist::PersistError> for CliError {
    fn from(e: mixb2d::persist::PersistError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "mixb2dppca", version, about)]
struct Cli {
    /// Worker threads; 1 is bit-exact sequential, 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides: KEY=VALUE, --KEY VALUE or --FLAG for boolean keys.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it with its convergence trace.
    Train(Settings),
    /// Reconstruct a dataset through a saved model.
    Reconstruct(Settings),
    /// Write the reduced representation of every sample.
    Project(Settings),
    /// Run the repeated 1-NN recognition protocol over a grid.
    Evaluate(Settings),
    /// Time the E-step phases across image sizes.
    Benchmark(Settings),
    /// Print a saved model's header, metadata and array shapes.
    Inspect {
        /// Model file to describe.
        model: PathBuf,
    },
}

fn resolve(settings: &Settings, threads: Option<usize>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &settings.config {
        cfg.apply_file(path)?;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.apply_args(&settings.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Train(s) => commands::train(&resolve(&s, threads)?),
        Command::Reconstruct(s) => commands::reconstruct(&resolve(&s, threads)?),
        Command::Project(s) => commands::project(&resolve(&s, threads)?),
        Command::Evaluate(s) => commands::evaluate(&resolve(&s, threads)?),
        Command::Benchmark(s) => commands::benchmark(&resolve(&s, threads)?),
        Command::Inspect { model } => commands::inspect(&model),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixb2dppca: {e}");
            ExitCode::from(e.code())
        }
    }
}
