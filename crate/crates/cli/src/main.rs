//! `eigenlane`: build eigenlane bases, generate candidates, run the detector
//! stages on supplied scores, and evaluate the results.
//!
//! Exit status is 0 on success, 2 when inputs or settings are invalid, and 1
//! for runtime failures such as unreadable files.

mod commands;
mod config;
mod par;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "eigenlane",
    version,
    about = "Eigenlane lane descriptors and detection stages"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic lane dataset (TuSimple or CSV).
    Synth(SynthArgs),
    /// Build an eigenlane basis from training lanes.
    BuildBasis(BuildBasisArgs),
    /// Report rank-1..M reconstruction quality of a dataset.
    Approx(ApproxArgs),
    /// Cluster training lanes into K candidates in eigenlane space.
    Cluster(ClusterArgs),
    /// Build K straight-line anchors expressed in a basis.
    StraightAnchors(StraightArgs),
    /// Mean best stripe IoU of a candidate set against test lanes.
    EvalCandidates(EvalCandidatesArgs),
    /// Score candidates against ground truth (stand-in for network outputs).
    ScoreOracle(ScoreOracleArgs),
    /// Run NMS, clique selection and refinement on per-image scores.
    Detect(DetectArgs),
    /// Evaluate predictions: stripe-IoU F-measure and point accuracy.
    Eval(EvalArgs),
    /// Render one image's lanes as SVG.
    Render(RenderArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Number of images.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Family weights straight,arc,s-curve.
    #[arg(long, value_name = "S,A,C", value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
    /// Road curvature range in 1/m.
    #[arg(long, value_name = "MIN,MAX", value_delimiter = ',', num_args = 2)]
    pub curvature: Option<Vec<f64>>,
    /// Most lanes per image.
    #[arg(long)]
    pub max_lanes: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct BuildBasisArgs {
    /// Training annotations (a directory for CULane).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ApproxArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the report as JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct StraightArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalCandidatesArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ScoreOracleArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Ground-truth annotations.
    #[arg(long)]
    pub data: PathBuf,
    /// Gaussian noise on probabilities and features.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Noise-only feature dimensions appended to every candidate.
    #[arg(long, default_value_t = 16)]
    pub noise_dim: usize,
    /// Per-image scores, one JSON object per line.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Per-image scores with relation features.
    #[arg(long)]
    pub scores: PathBuf,
    /// Skip eigenspace offset refinement.
    #[arg(long)]
    pub no_offsets: bool,
    /// Keep the candidates' own extent instead of the predicted height.
    #[arg(long)]
    pub no_heights: bool,
    /// Also write NMS picks, relation matrices and cliques per image.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Detected lanes as TuSimple JSON lines.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Predictions as TuSimple JSON lines.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth, read with `--format`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Categories whose predictions all count as false positives.
    #[arg(long, value_delimiter = ',')]
    pub fp_only: Vec<String>,
    /// Recompute every matched IoU by pixel counting and report the largest
    /// deviation from the closed-form value.
    #[arg(long)]
    pub pixel_audit: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct RenderArgs {
    /// Ground-truth annotations.
    #[arg(long)]
    pub data: PathBuf,
    /// Image id to draw (default: the first record).
    #[arg(long)]
    pub image: Option<String>,
    /// Predictions as TuSimple JSON lines.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Candidate set to draw underneath (needs `--basis`).
    #[arg(long, requires = "basis")]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Draw at most this many candidates.
    #[arg(long, default_value_t = 200)]
    pub max_candidates: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Synth(a) => commands::synth(&settings, &a),
        Command::BuildBasis(a) => commands::build_basis(&settings, &a),
        Command::Approx(a) => commands::approx(&settings, &a),
        Command::Cluster(a) => commands::cluster(&settings, &a),
        Command::StraightAnchors(a) => commands::straight_anchors(&settings, &a),
        Command::EvalCandidates(a) => commands::eval_candidates(&settings, &a),
        Command::ScoreOracle(a) => commands::score_oracle(&settings, &a),
        Command::Detect(a) => commands::detect(&settings, &a),
        Command::Eval(a) => commands::eval(&settings, &a),
        Command::Render(a) => commands::render(&settings, &a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let lib = err
        .chain()
        .find_map(|e| e.downcast_ref::<eigenlane::Error>());
    match lib {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
