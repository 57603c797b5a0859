use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cobbkit::ErrorKind;

mod commands;
mod config;

use config::{ConfigArgs, PipelineConfig, OUT_DIR_ENV};

/// Cobb angle post-processing, evaluation and synthetic data.
#[derive(Debug, Parser)]
#[command(name = "cobbkit", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Padded ground-truth boxes and box-normalized corners from landmarks
    Boxes(LandmarkInput),
    /// Cobb angles from detections or landmarks
    Angles(AnglesArgs),
    /// SMAPE and per-angle error of predicted against ground-truth angles
    Evaluate(EvaluateArgs),
    /// SVG overlays of the processing stages
    Render(RenderArgs),
    /// Synthetic spines with known angles
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct LandmarkInput {
    /// Landmark CSV
    #[arg(long)]
    landmarks: PathBuf,
    /// Image ids, one per line, for rows without an id column
    #[arg(long, requires = "dims")]
    ids: Option<PathBuf>,
    /// `image_id,width,height` rows; required with --ids
    #[arg(long)]
    dims: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnglesArgs {
    /// Prediction file
    #[arg(long, conflicts_with = "landmarks", required_unless_present = "landmarks")]
    predictions: Option<PathBuf>,
    /// Landmark CSV
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, requires = "dims")]
    ids: Option<PathBuf>,
    #[arg(long)]
    dims: Option<PathBuf>,
    /// Also write per-stage angles and intermediate landmarks
    #[arg(long)]
    dump_stages: bool,
    /// Ground-truth angles; adds a per-stage SMAPE table
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Challenge,
    Textbook,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth angles CSV
    #[arg(long)]
    gt: PathBuf,
    /// Predicted angles CSV
    #[arg(long)]
    pred: PathBuf,
    /// Ids for a ground-truth file without an id column
    #[arg(long)]
    gt_ids: Option<PathBuf>,
    /// Ids for a prediction file without an id column
    #[arg(long)]
    pred_ids: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::Challenge)]
    variant: Variant,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Prediction file
    #[arg(long)]
    predictions: PathBuf,
    /// Only render these images
    #[arg(long = "image-id")]
    image_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    C,
    S,
    Straight,
    /// Alternating C and S curves
    Mixed,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Kind::Mixed)]
    kind: Kind,
    /// Gaussian landmark noise in pixels
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Outlier boxes injected per image
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    /// Vertebrae dropped per image
    #[arg(long, default_value_t = 0)]
    drop: usize,
    /// Rows removed above the simulated detector input
    #[arg(long, default_value_t = 0.0)]
    crop_top_offset: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cobbkit::Error>().map(cobbkit::Error::kind) {
        Some(ErrorKind::Parse) => 3,
        Some(ErrorKind::Validation) => 4,
        Some(ErrorKind::Config) => 5,
        Some(ErrorKind::Io) | None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let cfg = PipelineConfig::resolve(&cli.config, env_out)?;
    match cli.command {
        Command::Boxes(a) => commands::boxes(&cfg, &a),
        Command::Angles(a) => commands::angles(&cfg, &a),
        Command::Evaluate(a) => commands::evaluate(&cfg, &a),
        Command::Render(a) => commands::render(&cfg, &a),
        Command::Synth(a) => commands::synth(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
