use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Exit status for invalid input: bad flags, files, manifests or configs.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for a numerical failure on otherwise valid input.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    pub fn validation(e: impl Into<anyhow::Error>) -> Self {
        Failure::Validation(e.into())
    }

    pub fn numerical(e: impl Into<anyhow::Error>) -> Self {
        Failure::Numerical(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "stackavg", version, about = "Stacking and Bayesian model averaging weights")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute model weights from a manifest.
    Weights(WeightsArgs),
    /// Write PSIS-LOO tables and per-model elpd summaries.
    Psis(PsisArgs),
    /// Score combined predictive distributions on held-out data.
    Score(ScoreArgs),
    /// Run a simulation experiment from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, clap::Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated methods, or `all`.
    #[arg(long, default_value = "stacking")]
    pub method: String,
    #[arg(long, default_value_t = stackavg::weights::DEFAULT_BB_SAMPLES)]
    pub bb_samples: usize,
    /// Overrides the manifest seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, clap::Args)]
pub struct PsisArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for loo_lpd.csv, k_hat.csv and elpd.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON file mapping each model id to a CSV of predictive draws
    /// (draws x held-out points).
    #[arg(long)]
    pub predictive: PathBuf,
    /// Held-out observations, one per line.
    #[arg(long)]
    pub observed: PathBuf,
    #[arg(long, default_value = "stacking")]
    pub method: String,
    /// log, quadratic, crps or energy.
    #[arg(long, default_value = "log")]
    pub rule: String,
    /// Integration grid LO:HI:N for the quadratic score and CRPS.
    #[arg(long, default_value = "-10:10:2001", allow_hyphen_values = true)]
    pub grid: String,
    /// Energy-score exponent in (0, 2].
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Mixture draws per point for the energy score.
    #[arg(long, default_value_t = 1000)]
    pub energy_draws: usize,
    #[arg(long, default_value_t = stackavg::weights::DEFAULT_BB_SAMPLES)]
    pub bb_samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for report.json and rows.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    }
    let result = match cli.command {
        Command::Weights(args) => commands::weights(&args),
        Command::Psis(args) => commands::psis(&args),
        Command::Score(args) => commands::score(&args),
        Command::Simulate(args) => commands::simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
