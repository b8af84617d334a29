//! Tracking error against ground truth and the constraint ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError};
use crate::features::{extract_features, provider_for, VolumeImage};
use crate::model::{ConstraintSet, FrameSequence, Trajectory, TrackingConfig};
use crate::network::{build_network, threshold_edges};
use crate::solver::{extract_trajectories, solve_flow};
use crate::synth::GroundTruth;

/// Tolerance for matching a trajectory start to a ground-truth start (mm).
pub const START_MATCH_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrorReport {
    pub overall_median: f64,
    pub overall_iqr: f64,
    pub es_median: f64,
    pub es_iqr: f64,
    pub ed_median: f64,
    pub ed_iqr: f64,
    /// Trajectories that entered the statistics.
    pub trajectories: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(median, IQR)`.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.5), quantile(&v, 0.75) - quantile(&v, 0.25))
}

/// Euclidean errors pooled over frames 2..T, plus the ES frame and the last
/// frame (ED) on their own. Trajectories are matched to ground truth by the
/// position of their frame-1 point.
pub fn tracking_error(
    trajectories: &[Trajectory],
    sequence: &FrameSequence,
    truth: &GroundTruth,
) -> Result<TrackingErrorReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::NoTrajectories);
    }
    let frames = sequence.num_frames();
    if truth.num_frames() != frames {
        return Err(EvalError::FrameMismatch {
            truth: truth.num_frames(),
            tracked: frames,
        });
    }
    let starts: Vec<_> = truth.starts().collect();
    let es = truth.es_frame();
    let ed = frames - 1;
    let mut all = Vec::new();
    let mut at_es = Vec::new();
    let mut at_ed = Vec::new();
    for traj in trajectories {
        if traj.len() != frames {
            return Err(EvalError::FrameMismatch {
                truth: frames,
                tracked: traj.len(),
            });
        }
        let p0 = sequence.point(traj.start());
        let (d, k) = starts
            .iter()
            .enumerate()
            .map(|(k, s)| (s.distance(&p0), k))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("ground truth has trajectories");
        if d > START_MATCH_TOL {
            return Err(EvalError::UnmatchedTrajectory(traj.start()));
        }
        for (t, id) in traj.points().iter().enumerate().skip(1) {
            let err = sequence.point(*id).distance(&truth.position(k, t));
            all.push(err);
            if t == es {
                at_es.push(err);
            }
            if t == ed {
                at_ed.push(err);
            }
        }
    }
    let (overall_median, overall_iqr) = median_iqr(&all);
    let summary = |v: &[f64]| if v.is_empty() { (0.0, 0.0) } else { median_iqr(v) };
    let (es_median, es_iqr) = summary(&at_es);
    let (ed_median, ed_iqr) = summary(&at_ed);
    Ok(TrackingErrorReport {
        overall_median,
        overall_iqr,
        es_median,
        es_iqr,
        ed_median,
        ed_iqr,
        trajectories: trajectories.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub constraints: ConstraintSet,
    pub report: TrackingErrorReport,
    pub shared_nodes: usize,
    pub incomplete: usize,
}

/// Tracks `sequence` once per ablation constraint set on one shared,
/// thresholded network (built with loop edges) and reports the error of each.
pub fn constraint_ablation(
    sequence: &FrameSequence,
    truth: &GroundTruth,
    config: &TrackingConfig,
    images: Option<&[VolumeImage]>,
) -> Result<Vec<AblationRow>, Error> {
    let provider = provider_for(&config.feature);
    let features = extract_features(sequence, provider.as_ref(), images)?;
    let shared = TrackingConfig {
        constraints: ConstraintSet::OUT_BAL_LOOP,
        ..config.clone()
    };
    let network = threshold_edges(&build_network(sequence, &features, provider.as_ref(), &shared)?, config.p_th);
    ConstraintSet::ablation_rows()
        .par_iter()
        .map(|&cs| {
            let sol = solve_flow(&network, cs)?;
            let ex = extract_trajectories(&sol, &network)?;
            let report = tracking_error(&ex.trajectories, sequence, truth)?;
            Ok(AblationRow {
                constraints: cs,
                report,
                shared_nodes: ex.shared_nodes.len(),
                incomplete: ex.incomplete,
            })
        })
        .collect()
}
