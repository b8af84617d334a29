//! End-to-end steps shared by the library users and the command line.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, FieldError};
use crate::features::{extract_features, provider_for, VolumeImage};
use crate::field::{default_collocation_grid, default_support_radius, fit_rbf, FieldSample, RbfModel, RegularizationWeights, DEFAULT_GRID_POINTS};
use crate::model::{FrameSequence, Point3, Trajectory, TrackingConfig};
use crate::network::{build_network, threshold_edges, FlowNetwork};
use crate::solver::{extract_trajectories, solve_flow, Extraction, FlowSolution};
use crate::strain::{strain_field, LvAxes, StrainField};

#[derive(Clone, Debug)]
pub struct TrackResult {
    /// The thresholded network that was solved.
    pub network: FlowNetwork,
    pub solution: FlowSolution,
    pub extraction: Extraction,
}

/// Features, network, threshold, solve and extraction in one go.
pub fn track(sequence: &FrameSequence, images: Option<&[VolumeImage]>, config: &TrackingConfig) -> Result<TrackResult, Error> {
    config.validate()?;
    let provider = provider_for(&config.feature);
    let features = extract_features(sequence, provider.as_ref(), images)?;
    let network = build_network(sequence, &features, provider.as_ref(), config)?;
    let network = threshold_edges(&network, config.p_th);
    let solution = solve_flow(&network, config.constraints)?;
    let extraction = extract_trajectories(&solution, &network)?;
    Ok(TrackResult {
        network,
        solution,
        extraction,
    })
}

/// How to place the field fit for each frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOptions {
    pub regularization: RegularizationWeights,
    /// `None` picks twice the median center spacing.
    pub support_radius: Option<f64>,
    pub grid_points: usize,
}

impl Default for DensifyOptions {
    fn default() -> Self {
        Self {
            regularization: RegularizationWeights::default(),
            support_radius: None,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Lagrangian displacement samples of frame `t`: frame-1 positions with
/// their displacement to frame `t`.
pub fn displacement_samples(sequence: &FrameSequence, trajectories: &[Trajectory], t: usize) -> Vec<FieldSample> {
    trajectories
        .iter()
        .map(|tr| {
            let p0 = sequence.point(tr.points()[0]);
            let pt = sequence.point(tr.points()[t]);
            FieldSample::new(p0, pt.to_vector() - p0.to_vector())
        })
        .collect()
}

/// One displacement field per frame, referenced to frame 1 and centered on
/// the tracked frame-1 points.
pub fn densify(
    sequence: &FrameSequence,
    trajectories: &[Trajectory],
    options: &DensifyOptions,
) -> Result<Vec<RbfModel>, Error> {
    if trajectories.is_empty() {
        return Err(FieldError::InvalidInput("no trajectories to densify".into()).into());
    }
    let centers: Vec<Point3> = trajectories.iter().map(|t| sequence.point(t.start())).collect();
    let support = match options.support_radius {
        Some(r) => r,
        None => default_support_radius(&centers)
            .ok_or_else(|| FieldError::InvalidInput("cannot derive a support radius from fewer than two distinct centers".into()))?,
    };
    let grid = default_collocation_grid(&centers, options.grid_points);
    let models: Result<Vec<RbfModel>, FieldError> = (0..sequence.num_frames())
        .into_par_iter()
        .map(|t| {
            let samples = displacement_samples(sequence, trajectories, t);
            if samples.iter().all(|s| s.displacement == Vector3::zeros()) {
                return RbfModel::new(centers.clone(), vec![[0.0; 3]; centers.len()], support);
            }
            fit_rbf(&samples, &centers, support, &options.regularization, &grid)
        })
        .collect();
    Ok(models?)
}

/// Strain at `queries` (frame-1 positions) for every frame's field.
pub fn strain_series(models: &[RbfModel], axes: &LvAxes, queries: &[Point3]) -> Vec<StrainField> {
    models.iter().map(|m| strain_field(m, axes, queries)).collect()
}
