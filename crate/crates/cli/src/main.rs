mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use svare::Model;

#[derive(Debug, Parser)]
#[command(
    name = "svare",
    version,
    about = "Hedonic price models with AR(1) random effects and stochastic volatility"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

/// Overrides for values in the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Structured config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Input CSV: the sample for `fit`, the new rows for `forecast`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<Model>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Quadrature points for the random effect.
    #[arg(long, global = true)]
    pub nu: Option<usize>,
    /// Quadrature points for the log-variance.
    #[arg(long, global = true)]
    pub nh: Option<usize>,
    /// Base period of the price index.
    #[arg(long, global = true)]
    pub base: Option<String>,
    /// `last` or `random:N`.
    #[arg(long, global = true)]
    pub holdout: Option<String>,
    /// Directory written by an earlier `fit`.
    #[arg(long, global = true)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a model and write estimates, states and residuals.
    Fit,
    /// Predict prices of new rows from a fitted model.
    Forecast,
    /// Residual moments, correlograms, entropy bands and the rank Levene test.
    Diagnose,
    /// Price index from the fitted period intercepts.
    Index,
    /// Simulate a dataset with known latent paths.
    Simulate,
}

fn run(cli: Cli) -> Result<commands::Outcome> {
    let cfg = commands::resolve(&cli.flags)?;
    if let Some(n) = cfg.fit.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    std::fs::create_dir_all(&cli.flags.out)
        .with_context(|| format!("creating output directory {}", cli.flags.out.display()))?;
    let out = cli.flags.out.as_path();
    match cli.command {
        Command::Fit => commands::fit(cfg, out),
        Command::Forecast => commands::forecast(cfg, out),
        Command::Diagnose => commands::diagnose(cfg, out),
        Command::Index => commands::index(cfg, out),
        Command::Simulate => commands::simulate(cfg, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => {
            eprintln!("warning: optimizer did not converge; artifacts written");
            ExitCode::from(2)
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
