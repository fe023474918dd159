mod config;
mod error;
mod io;
mod report;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use error::CliError;

/// Weekly death registration baselines and excess deaths.
#[derive(Debug, Parser)]
#[command(name = "regdeaths", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compute standard errors separately for each sex.
    #[arg(long, global = true)]
    by_sex: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Parse and validate the deaths file.
    Ingest,
    /// Build weekly covariates from temperature, air quality and holidays.
    Features,
    /// Fit the mortality model.
    Fit,
    /// Predict expected deaths for every week.
    Baseline,
    /// Compute excess deaths with error bands and aggregates.
    Excess,
    /// Write tables, charts and a hashed manifest.
    Report,
    /// Impute missing weekly temperatures.
    Impute,
    /// Simulate deaths from a known model.
    Simulate,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.by_sex |= cli.by_sex;
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    match cli.command {
        Command::Ingest => stages::ingest(&cfg),
        Command::Features => stages::features(&cfg),
        Command::Fit => stages::fit(&cfg),
        Command::Baseline => stages::baseline(&cfg),
        Command::Excess => stages::excess(&cfg),
        Command::Report => report::report(&cfg),
        Command::Impute => stages::impute(&cfg),
        Command::Simulate => stages::simulate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regdeaths: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
