//! `pointclean`: generate data, train, clean, evaluate, and report.

mod clean;
mod error;
mod evaluate;
mod generate;
mod plot;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointclean::io::CloudFormat;

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "pointclean",
    version,
    about = "Learned outlier removal and denoising for point clouds"
)]
struct Cli {
    /// Worker threads; 1 makes every command byte-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample meshes and write corrupted clouds plus a manifest.
    GenerateData(GenerateArgs),
    /// Train an outlier or displacement network on a manifest.
    Train(TrainArgs),
    /// Remove outliers from and denoise one cloud.
    Clean(CleanArgs),
    /// Compare a cleaned cloud with its ground truth.
    Evaluate(EvaluateArgs),
    /// Render plots and a summary table from reports, traces, and curves.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Xyz,
    Ply,
}

impl From<Format> for CloudFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Xyz => CloudFormat::Xyz,
            Format::Ply => CloudFormat::Ply,
        }
    }
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Dataset recipe (TOML). Defaults to the denoising recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `.obj` meshes.
    #[arg(long, required_unless_present = "builtin")]
    pub input: Option<PathBuf>,
    /// Comma-separated built-in shapes to use instead of (or with) meshes.
    #[arg(long, value_delimiter = ',')]
    pub builtin: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training recipe (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Training manifest.
    #[arg(long)]
    pub input: PathBuf,
    /// Validation manifest.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Directory for checkpoints and curves.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct CleanArgs {
    /// Cleaning options (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cloud to clean.
    #[arg(long)]
    pub input: PathBuf,
    /// Cleaned cloud; the trace goes next to it.
    #[arg(long)]
    pub output: PathBuf,
    /// Displacement network checkpoint.
    #[arg(long)]
    pub denoise_model: PathBuf,
    /// Outlier network checkpoint.
    #[arg(long)]
    pub outlier_model: Option<PathBuf>,
    /// Ground truth; adds per-iteration chamfer values to the trace.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Patch-sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub skip_outliers: bool,
    /// Also write the cloud after every iteration.
    #[arg(long)]
    pub intermediates: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Cleaned cloud.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth cloud.
    #[arg(long)]
    pub reference: PathBuf,
    /// Per-input-point removal flags written by `clean`.
    #[arg(long, requires = "truth")]
    pub predicted: Option<PathBuf>,
    /// True outlier labels (`.outliers` file).
    #[arg(long, requires = "predicted")]
    pub truth: Option<PathBuf>,
    /// Scale both clouds by the reference bounding-box diagonal first.
    #[arg(long)]
    pub normalize: bool,
    /// Tag stored in the report, such as the noise level.
    #[arg(long)]
    pub label: Option<String>,
    /// Report JSON path.
    #[arg(long)]
    pub output: PathBuf,
    /// Error-colored PLY of the cleaned cloud.
    #[arg(long)]
    pub colored: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metric reports (JSON), cleaning traces (JSON), or training curves (CSV).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenerateData(a) => generate::run(a),
        Command::Train(a) => train::run(a),
        Command::Clean(a) => clean::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
