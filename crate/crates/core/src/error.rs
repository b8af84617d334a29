use thiserror::Error;

use crate::model::{PointId, SequenceViolation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid frame sequence: {}", join(.0))]
    InvalidSequence(Vec<SequenceViolation>),
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("invalid constraint set: {0}")]
    InvalidConstraintSet(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn join(v: &[SequenceViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("no surface points in axial slice {slice}")]
    EmptySlice { slice: usize },
    #[error("invalid sampling spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("this feature provider needs a volume image")]
    ImageRequired,
    #[error("invalid feature parameters: {0}")]
    InvalidParameters(String),
    #[error("{0} volume images supplied for {1} frames")]
    ImageCountMismatch(usize, usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("sigma must be strictly positive (sigma_x={sigma_x}, sigma_f={sigma_f})")]
    NonPositiveSigma { sigma_x: f64, sigma_f: f64 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid network input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid constraint set: {0}")]
    InvalidConstraintSet(String),
    #[error("LP solution is not integral (max deviation {max_deviation:.3e})")]
    NonIntegralSolution { max_deviation: f64 },
    #[error("solver failure: {reason} (max residual {max_residual:.3e})")]
    SolverFailure { reason: String, max_residual: f64 },
    #[error("flow cannot be walked into trajectories at {at}: {reason}")]
    BrokenPath { at: PointId, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("no basis function overlaps any sample")]
    DegenerateSystem,
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum StrainError {
    #[error("position lies on the long axis (distance {distance:.3e} mm)")]
    OnAxis { distance: f64 },
    #[error("invalid axes: {0}")]
    InvalidAxes(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("trajectory starting at {0} has no ground-truth start within tolerance")]
    UnmatchedTrajectory(PointId),
    #[error("no trajectories to evaluate")]
    NoTrajectories,
    #[error("ground truth has {truth} frames but trajectories have {tracked}")]
    FrameMismatch { truth: usize, tracked: usize },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Umbrella error for pipeline-level entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Strain(#[from] StrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
}
