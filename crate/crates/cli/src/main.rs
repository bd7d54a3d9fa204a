//! `varirt`: simulate response data, fit IRT models and evaluate the fits.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use varirt::data::DataKind;
use varirt::models::Family;
use varirt::Error;

use config::{Algorithm, Command, Metric, RunConfig, OUTPUT_ENV};

#[derive(Parser)]
#[command(name = "varirt", version, about = "Variational and classical inference for item response theory")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a synthetic response matrix and its generating parameters.
    Simulate(RunArgs),
    /// Fit a model and write posterior draws, parameters and a training trace.
    Fit(RunArgs),
    /// Score a previous fit against the same data.
    Evaluate(RunArgs),
}

/// Flags override values from `--config`.
#[derive(Args, Default)]
struct RunArgs {
    /// TOML file with run settings; keys match the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated response matrix, `NA` for missing cells.
    #[arg(long)]
    data: Option<PathBuf>,
    /// The first row of the data file names the items.
    #[arg(long)]
    header: bool,
    /// binary or polytomous.
    #[arg(long)]
    kind: Option<DataKind>,
    /// Generating parameters written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// 1pl, 2pl, 3pl, mirt-2pl, link, deep or residual.
    #[arg(long)]
    family: Option<Family>,
    /// Family that generates synthetic data when no data file is given.
    #[arg(long)]
    generator: Option<Family>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fraction of observed responses held out for imputation.
    #[arg(long)]
    holdout: Option<f64>,
    /// Posterior draws kept from a variational fit.
    #[arg(long)]
    draws: Option<usize>,
    /// Importance samples per person for the log marginal.
    #[arg(long)]
    is_samples: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Fit directory of a second algorithm for the predictive check.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUTPUT_ENV)]
    output: Option<PathBuf>,
    /// Upper bound on threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn resolve(self, command: Command) -> varirt::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.command = command;
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field {
                    cfg.$field = v;
                })*
            };
        }
        take!(kind, n, m, k, family, generator, algorithm, learning_rate, batch_size, holdout, draws, is_samples, metrics, seed);
        cfg.header |= self.header;
        cfg.data = self.data.or(cfg.data);
        cfg.truth = self.truth.or(cfg.truth);
        cfg.compare = self.compare.or(cfg.compare);
        cfg.iterations = self.iterations.or(cfg.iterations);
        cfg.output = self.output.or(cfg.output);
        cfg.workers = self.workers.or(cfg.workers);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => 3,
        Error::Io(_) | Error::Serde(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Fit(a) => (Command::Fit, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
    };
    let result = args.resolve(command).and_then(|cfg| match command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("varirt: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
