//! Command-line experiment runner.

mod config;
mod experiments;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Generator, JumpSpec, StoppingSpec};
pub use experiments::{execute, resolve, Outcome, Resolved, Truth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DM_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Decompose,
    Ui,
    Komlos,
    Convergence,
    Validate,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad config, flags or instance.
    Usage(String),
    /// An asserted invariant failed or a computation could not complete.
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dm-lab", version, about = "Exact Doob-Meyer decomposition experiments on finite filtered spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discrete decompositions at every level, with recovery errors for generated instances.
    Decompose(Flags),
    /// Tail masses, tail inequality and Markov bounds of the compensators.
    Ui(Flags),
    /// Forward convex combinations of the terminal martingales.
    Komlos(Flags),
    /// Combined processes measured against the master decomposition.
    Convergence(Flags),
    /// Checks an instance and reports its basic properties.
    Validate(Flags),
}

/// Flags override the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON instance file.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub generator: Option<Generator>,
    /// Master grid depth of a generated instance.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn split(self) -> (Experiment, Flags) {
        match self {
            Command::Decompose(f) => (Experiment::Decompose, f),
            Command::Ui(f) => (Experiment::Ui, f),
            Command::Komlos(f) => (Experiment::Komlos, f),
            Command::Convergence(f) => (Experiment::Convergence, f),
            Command::Validate(f) => (Experiment::Validate, f),
        }
    }
}

/// Config file (or defaults) with the flags applied on top.
pub fn build_config(flags: &Flags) -> Result<ExperimentConfig, Failure> {
    let mut config = match &flags.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &flags.instance {
        config.instance = Some(p.clone());
    }
    if flags.generator.is_some() {
        config.generator = flags.generator;
    }
    if flags.depth.is_some() {
        config.depth = flags.depth;
    }
    if flags.seed.is_some() {
        config.seed = flags.seed;
    }
    if let Some(out) = &flags.out {
        config.out = out.clone();
    }
    config.validate().map_err(Failure::Usage)?;
    Ok(config)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool built earlier in the same process stays in place
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("global thread pool already initialized");
    }
    Ok(())
}

/// Runs the experiment and writes its reports; the single writer of the output directory.
pub fn run(experiment: Experiment, config: &ExperimentConfig) -> Result<Outcome, Failure> {
    let outcome = execute(experiment, config)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| Failure::Invariant(format!("cannot create {}: {e}", config.out.display())))?;
    for (name, contents) in &outcome.files {
        let path = config.out.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::Invariant(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(outcome)
}

/// Parses arguments, runs, prints a summary and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (experiment, flags) = cli.command.split();
    let result = configure_threads()
        .and_then(|()| build_config(&flags))
        .and_then(|config| run(experiment, &config).map(|o| (o, config)));
    match result {
        Ok((outcome, config)) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for (name, _) in &outcome.files {
                println!("wrote {}", config.out.join(name).display());
            }
            match outcome.failures.first() {
                None => EXIT_OK,
                Some(first) => {
                    eprintln!("invariant failure: {first}");
                    if outcome.failures.len() > 1 {
                        eprintln!("({} further failures in total)", outcome.failures.len() - 1);
                    }
                    EXIT_INVARIANT
                }
            }
        }
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("usage error: {msg}"),
                Failure::Invariant(msg) => eprintln!("invariant failure: {msg}"),
            }
            failure.exit_code()
        }
    }
}
