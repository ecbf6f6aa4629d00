//! `ispg`: train, evaluate and verify internal-state NPG on tabular
//! partially observable potential games.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "ispg", version, about, after_help = config::DEFAULTS_HELP)]
struct Cli {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run NPG and write metrics.csv, policy.json, config.toml and manifest.json.
    Train,
    /// Evaluate a policy file and write eval.json.
    Eval {
        #[arg(long)]
        policy: PathBuf,
    },
    /// Check the supporting inequalities and the convergence bound; writes verify.json.
    Verify {
        /// Use the records of an earlier `train` run (logged with cadence 1)
        /// instead of a fresh run.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Turn metrics of one or more runs into plot-ready series.
    PlotData {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Write the configured environment as a model file.
    GenModel,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Compute(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Compute(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<ispg::Error> for CliError {
    fn from(e: ispg::Error) -> Self {
        use ispg::Error::*;
        match e {
            Param(_) | Load { .. } | Json(_) => CliError::Validation(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Compute(e.to_string()))?;
    }
    match cli.command {
        Command::Train => commands::train_run(&cfg),
        Command::Eval { policy } => commands::eval(&cfg, &policy),
        Command::Verify { run } => commands::verify(&cfg, run.as_deref()),
        Command::PlotData { runs } => commands::plot_data(&runs, cli.out.as_deref()),
        Command::GenModel => commands::gen_model(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ispg: {e}");
            ExitCode::from(e.code())
        }
    }
}
