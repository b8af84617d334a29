//! `flowtrack` command line: generate phantoms, track, densify, strain,
//! evaluate and ablate.
//!
//! Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "flowtrack", version, about = "Periodic point-set tracking, dense displacement and strain")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads for the parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic phantom: points.csv, truth.csv, phantom.json and volumes.
    Generate(GenerateArgs),
    /// Build, threshold and solve the flow network; write trajectories.json.
    Track(TrackArgs),
    /// Fit one displacement field per frame; write fields.json.
    Densify(DensifyArgs),
    /// Directional Lagrangian strain at query points; write strain.csv.
    Strain(StrainArgs),
    /// Tracking error of a trajectory file against ground truth.
    Evaluate(EvaluateArgs),
    /// Track once per constraint set and compare against ground truth.
    Ablate(AblateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    Shells,
    Toy1d,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "shells")]
    pub phantom: PhantomKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coordinate noise stddev (mm) on frames after the first.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub z_fr: Option<usize>,
    #[arg(long)]
    pub theta_fr: Option<usize>,
    #[arg(long)]
    pub contraction: Option<f64>,
    #[arg(long)]
    pub twist: Option<f64>,
    #[arg(long)]
    pub image_noise: Option<f64>,
    #[arg(long)]
    pub voxel_spacing: Option<f64>,
    #[arg(long)]
    pub texture_components: Option<usize>,
    #[arg(long)]
    pub no_volumes: bool,
    /// Points per frame of the 1-D toy.
    #[arg(long, default_value_t = 6)]
    pub points: usize,
    /// Let the first two toy points cross.
    #[arg(long)]
    pub crossing: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureChoice {
    Position,
    Patch,
    Hog,
}

#[derive(Args, Debug, Default)]
pub struct TrackingFlags {
    #[arg(long)]
    pub nk: Option<usize>,
    #[arg(long)]
    pub p_th: Option<f64>,
    /// Comma-separated subset of out,in,bal,loop.
    #[arg(long)]
    pub constraints: Option<String>,
    #[arg(long, value_enum)]
    pub feature: Option<FeatureChoice>,
    #[arg(long)]
    pub patch_radius: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Upper edge of the gradient-magnitude histogram.
    #[arg(long)]
    pub max_magnitude: Option<f64>,
    /// Spatial gate radius as a multiple of the transition's displacement scale.
    #[arg(long, conflicts_with_all = ["gate_radius", "no_gate"])]
    pub gate_factor: Option<f64>,
    /// Fixed spatial gate radius (mm).
    #[arg(long, conflicts_with = "no_gate")]
    pub gate_radius: Option<f64>,
    #[arg(long)]
    pub no_gate: bool,
    /// Fixed weight normalizers instead of per-transition estimates.
    #[arg(long, requires = "sigma_f")]
    pub sigma_x: Option<f64>,
    #[arg(long, requires = "sigma_x")]
    pub sigma_f: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct FieldFlags {
    #[arg(long)]
    pub lambda_sparse: Option<f64>,
    #[arg(long)]
    pub lambda_div: Option<f64>,
    #[arg(long)]
    pub lambda_grad: Option<f64>,
    /// RBF support radius (mm); defaults to twice the median center spacing.
    #[arg(long)]
    pub support: Option<f64>,
    /// Collocation grid size for the penalty terms.
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InputFlags {
    /// Directory holding points.csv and, optionally, phantom.json, truth.csv
    /// and volume files.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[command(flatten)]
    pub io: InputFlags,
    /// Ground truth CSV; defaults to truth.csv in the input directory if present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub tracking: TrackingFlags,
}

#[derive(Args, Debug)]
pub struct DensifyArgs {
    #[command(flatten)]
    pub io: InputFlags,
    /// Trajectory file; defaults to trajectories.json in the input directory.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[command(flatten)]
    pub field: FieldFlags,
}

#[derive(Args, Debug)]
pub struct StrainArgs {
    #[command(flatten)]
    pub io: InputFlags,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Fields written by `densify`; fitted afresh when absent.
    #[arg(long)]
    pub fields: Option<PathBuf>,
    /// CSV of frame-1 query points with header x,y,z. Defaults to the
    /// phantom's mid-wall points, else the tracked frame-1 points.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub field: FieldFlags,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub io: InputFlags,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub io: InputFlags,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub tracking: TrackingFlags,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Compute(_) => 1,
        }
    }
}

impl From<flowtrack::Error> for Failure {
    fn from(e: flowtrack::Error) -> Self {
        match e {
            flowtrack::Error::Io(_) => Failure::Usage(e.into()),
            _ => Failure::Compute(e.into()),
        }
    }
}

impl From<flowtrack::error::IoError> for Failure {
    fn from(e: flowtrack::error::IoError) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Compute(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
