//! `mtac`: generate corpora, train, evaluate, audit relabels and tabulate runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default parent directory for runs.
pub const OUT_ROOT_ENV: &str = "MTAC_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "mtac", version, about = "Noise-robust multi-task emotion classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus: manifest plus flip-mask sidecar.
    Synth(SynthArgs),
    /// Inject label noise, train one configuration and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Evaluate(EvaluateArgs),
    /// Score a run's relabel log against its flip mask.
    Audit(AuditArgs),
    /// Tabulate seed medians across run directories.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator settings; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON training settings; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of training labels to flip: 0, 0.1, 0.2 or 0.3.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Accept any noise ratio in [0, 1).
    #[arg(long)]
    pub any_noise: bool,
    /// none, t, t+va, t+au or full.
    #[arg(long)]
    pub branches: Option<String>,
    /// data, random or fixed.
    #[arg(long)]
    pub edges: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run directory; defaults to a name under $MTAC_OUT_ROOT.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint file, or a run directory containing `checkpoint.json`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Run directory holding `audit.jsonl` and `flip-mask.tsv`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for `report.txt` and `report.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<mtac::Error> for CliError {
    fn from(e: mtac::Error) -> Self {
        match e {
            mtac::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Audit(a) => commands::audit(&a),
        Command::Report(a) => report::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
