//! `panoroom`: synthetic corpora, layout reconstruction and evaluation from
//! the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CountList, FileConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] panoroom::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(panoroom::Error::Validation(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "panoroom", version, about = "Manhattan room layouts from panoramic edge and corner maps")]
struct Cli {
    /// Flat `key = value` file supplying defaults for any flag below
    /// (flag names with `_` for `-`). Command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample random rooms and write layouts, rendered maps and a manifest.
    Synth(SynthArgs),
    /// Render ground-truth edge and corner maps for the layouts of a corpus.
    RenderGt(RenderGtArgs),
    /// Apply seeded noise to the maps of a corpus.
    Corrupt(CorruptArgs),
    /// Recover a layout for every room of a corpus from its maps.
    Reconstruct(ReconstructArgs),
    /// Score predicted layouts against ground truth; CSV with a mean row.
    Evaluate(EvaluateArgs),
    /// Precision, recall, F1 and accuracy of predicted maps; CSV with mean rows.
    MapMetrics(MapMetricsArgs),
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Std. dev. of additive Gaussian noise [default: 0]
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Fraction of background pixels turned into spurious responses [default: 0]
    #[arg(long)]
    noise_spurious: Option<f64>,
    /// Fraction of structure pixels zeroed [default: 0]
    #[arg(long)]
    noise_dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of rooms [default: 200]
    #[arg(long)]
    rooms: Option<usize>,
    /// Corpus seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Allowed corner counts, comma separated, each in {4,6,8,10,12} [default: 4,6,8,10]
    #[arg(long)]
    corners: Option<CountList>,
    /// Never sample four-corner rooms when larger counts are allowed.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    complex_only: Option<bool>,
    /// Map width in pixels; height is half of it [default: 128]
    #[arg(long)]
    width: Option<usize>,
    /// Rendered line width in pixels [default: 2]
    #[arg(long)]
    line_thickness: Option<f64>,
    /// Gaussian blur of rendered maps in pixels [default: 1.5]
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct RenderGtArgs {
    /// Corpus directory with `manifest.csv` and `rooms/`.
    #[arg(long)]
    input: PathBuf,
    /// Output corpus directory [default: the input directory]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Map width in pixels; height is half of it [default: 128]
    #[arg(long)]
    width: Option<usize>,
    /// Rendered line width in pixels [default: 2]
    #[arg(long)]
    line_thickness: Option<f64>,
    /// Gaussian blur of rendered maps in pixels [default: 1.5]
    #[arg(long)]
    blur_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Corpus directory with `manifest.csv` and `maps/`.
    #[arg(long)]
    input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Noise seed, combined with each room's seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Corpus directory with `manifest.csv` and `maps/`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; layouts go to `rooms/`, a status table to `reconstruct.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Also write `overlays/<id>.png`: prediction in yellow over ground truth in green.
    #[arg(long)]
    overlay: bool,
    /// RANSAC seed [default: 0]
    #[arg(long = "seed")]
    ransac_seed: Option<u64>,
    /// Camera height above the floor, sets the metric scale [default: 1]
    #[arg(long)]
    camera_height: Option<f64>,
    /// Largest corner count considered [default: 12]
    #[arg(long)]
    max_corners: Option<usize>,
    /// Hypotheses kept for scoring [default: 500]
    #[arg(long)]
    max_hypotheses: Option<usize>,
    /// Local refinement of the best hypotheses against the maps [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    refine: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory with predicted `rooms/<id>.layout`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth corpus directory with `manifest.csv` and `rooms/`.
    #[arg(long)]
    gt: PathBuf,
    /// CSV output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Width of the panorama used for corner and pixel errors [default: 512]
    #[arg(long)]
    eval_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MapMetricsArgs {
    /// Directory with predicted `maps/<id>_{edge,corner}.prm`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth corpus directory with `manifest.csv` and `maps/`.
    #[arg(long)]
    gt: PathBuf,
    /// edge, corner or both [default: both]
    #[arg(long)]
    channel: Option<String>,
    /// Binarization threshold applied to both maps [default: 0.25]
    #[arg(long)]
    threshold: Option<f64>,
    /// CSV output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PANOROOM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("PANOROOM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => commands::synth(a, &file),
        Command::RenderGt(a) => commands::render_gt(a, &file),
        Command::Corrupt(a) => commands::corrupt(a, &file),
        Command::Reconstruct(a) => commands::reconstruct_cmd(a, &file),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &file),
        Command::MapMetrics(a) => commands::map_metrics_cmd(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
