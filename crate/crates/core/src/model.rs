//! Shared domain vocabulary: points, frame sequences, trajectories and the
//! tracking configuration.
//!
//! Frame and point indices are 0-based in memory. Serialized artifacts use
//! 1-based indices; the conversion lives in [`crate::io`].

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A point in millimeters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn translated(&self, d: &Vector3<f64>) -> Self {
        Self::new(self.x + d.x, self.y + d.y, self.z + d.z)
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(v: Vector3<f64>) -> Self {
        Self::from_vector(&v)
    }
}

/// Identifies point `index` of frame `frame` (both 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointId {
    pub frame: usize,
    pub index: usize,
}

impl PointId {
    pub const fn new(frame: usize, index: usize) -> Self {
        Self { frame, index }
    }
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // 1-based, matching the serialized notation.
        write!(f, "(t={}, i={})", self.frame + 1, self.index + 1)
    }
}

/// An ordered list of point clouds, one per frame.
///
/// Frames may hold different numbers of points. Construction does not
/// validate; call [`validate_sequence`] before handing a sequence to the
/// solver.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Vec<Point3>>,
    periodic: bool,
    offsets: Vec<usize>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Vec<Point3>>, periodic: bool) -> Self {
        let mut offsets = Vec::with_capacity(frames.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for f in &frames {
            acc += f.len();
            offsets.push(acc);
        }
        Self {
            frames,
            periodic,
            offsets,
        }
    }

    pub fn frames(&self) -> &[Vec<Point3>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[Point3] {
        &self.frames[t]
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn num_points(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn point(&self, id: PointId) -> Point3 {
        self.frames[id.frame][id.index]
    }

    pub fn contains(&self, id: PointId) -> bool {
        id.frame < self.frames.len() && id.index < self.frames[id.frame].len()
    }

    /// Dense node number of `id`, frame-major.
    pub fn node_index(&self, id: PointId) -> usize {
        self.offsets[id.frame] + id.index
    }

    pub fn point_id(&self, node: usize) -> PointId {
        // offsets is sorted; find the frame whose range holds `node`.
        let frame = self.offsets.partition_point(|&o| o <= node) - 1;
        PointId::new(frame, node - self.offsets[frame])
    }

    pub fn ids(&self) -> impl Iterator<Item = PointId> + '_ {
        self.frames
            .iter()
            .enumerate()
            .flat_map(|(t, f)| (0..f.len()).map(move |i| PointId::new(t, i)))
    }

    /// Fails with every violation found by [`validate_sequence`].
    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let violations = validate_sequence(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidSequence(violations))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SequenceViolation {
    TooFewFrames { frames: usize },
    EmptyFrame { frame: usize },
    NonFinitePoint { id: PointId },
}

impl fmt::Display for SequenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewFrames { frames } => {
                write!(f, "sequence has {frames} frame(s), at least 2 required")
            }
            Self::EmptyFrame { frame } => write!(f, "frame {} is empty", frame + 1),
            Self::NonFinitePoint { id } => write!(f, "point {id} has a non-finite coordinate"),
        }
    }
}

/// Lists everything that makes `seq` unusable. Empty means usable.
pub fn validate_sequence(seq: &FrameSequence) -> Vec<SequenceViolation> {
    let mut out = Vec::new();
    if seq.num_frames() < 2 {
        out.push(SequenceViolation::TooFewFrames {
            frames: seq.num_frames(),
        });
    }
    for (t, frame) in seq.frames().iter().enumerate() {
        if frame.is_empty() {
            out.push(SequenceViolation::EmptyFrame { frame: t });
        }
        for (i, p) in frame.iter().enumerate() {
            if !p.is_finite() {
                out.push(SequenceViolation::NonFinitePoint {
                    id: PointId::new(t, i),
                });
            }
        }
    }
    out
}

/// One tracked point per frame, optionally closed back into frame 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    points: Vec<PointId>,
    loop_closure: Option<PointId>,
}

impl Trajectory {
    pub fn new(points: Vec<PointId>, loop_closure: Option<PointId>) -> Result<Self, ModelError> {
        if let Some((t, p)) = points.iter().enumerate().find(|(t, p)| p.frame != *t) {
            return Err(ModelError::MalformedTrajectory(format!(
                "entry {} refers to frame {}",
                t + 1,
                p.frame + 1
            )));
        }
        if let Some(c) = loop_closure {
            if c.frame != 0 {
                return Err(ModelError::MalformedTrajectory(format!(
                    "loop closure {c} is not in frame 1"
                )));
            }
        }
        Ok(Self {
            points,
            loop_closure,
        })
    }

    pub fn points(&self) -> &[PointId] {
        &self.points
    }

    pub fn start(&self) -> PointId {
        self.points[0]
    }

    pub fn loop_closure(&self) -> Option<PointId> {
        self.loop_closure
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which per-node constraint families enter the optimization.
///
/// `out` is always on; `closed_loop` requires `bal`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConstraintSet {
    pub inc: bool,
    pub bal: bool,
    pub closed_loop: bool,
}

impl ConstraintSet {
    pub const OUT: Self = Self::new(false, false, false);
    pub const OUT_IN: Self = Self::new(true, false, false);
    pub const OUT_BAL: Self = Self::new(false, true, false);
    pub const OUT_BAL_LOOP: Self = Self::new(false, true, true);

    pub const fn new(inc: bool, bal: bool, closed_loop: bool) -> Self {
        Self {
            inc,
            bal,
            closed_loop,
        }
    }

    /// C_out is implicit in every set.
    pub const fn out(&self) -> bool {
        true
    }

    pub fn is_valid(&self) -> bool {
        !self.closed_loop || self.bal
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(ModelError::InvalidConstraintSet(
                "loop constraints require balance".into(),
            ))
        }
    }

    /// Every valid combination, in the order used by the ablation table
    /// followed by the redundant C_in variants.
    pub fn all_valid() -> [Self; 6] {
        [
            Self::OUT,
            Self::OUT_IN,
            Self::OUT_BAL,
            Self::OUT_BAL_LOOP,
            Self::new(true, true, false),
            Self::new(true, true, true),
        ]
    }

    /// The four rows of the constraint ablation.
    pub fn ablation_rows() -> [Self; 4] {
        [Self::OUT, Self::OUT_IN, Self::OUT_BAL, Self::OUT_BAL_LOOP]
    }
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::OUT_BAL_LOOP
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("out")?;
        if self.inc {
            f.write_str(",in")?;
        }
        if self.bal {
            f.write_str(",bal")?;
        }
        if self.closed_loop {
            f.write_str(",loop")?;
        }
        Ok(())
    }
}

impl FromStr for ConstraintSet {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = Self::OUT;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "out" => {}
                "in" => set.inc = true,
                "bal" => set.bal = true,
                "loop" => set.closed_loop = true,
                other => {
                    return Err(ModelError::InvalidConstraintSet(format!(
                        "unknown constraint `{other}`"
                    )))
                }
            }
        }
        set.validate()?;
        Ok(set)
    }
}

impl TryFrom<String> for ConstraintSet {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ConstraintSet> for String {
    fn from(c: ConstraintSet) -> Self {
        c.to_string()
    }
}

/// How the edge-weight normalizers are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaMode {
    /// Population standard deviation of candidate distances, per transition.
    PerFrameStddev,
    Fixed { sigma_x: f64, sigma_f: f64 },
}

/// Spatial pre-filter applied before the feature k-NN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialGate {
    /// Radius = factor × displacement-scale estimate of the transition.
    Auto { factor: f64 },
    Radius { mm: f64 },
    Unbounded,
}

/// Appearance/shape feature used for candidate selection and weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureKind {
    Position,
    IntensityPatch { patch_radius: usize },
    GradientHistogram { patch_radius: usize, bins: usize, max_magnitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub nk: usize,
    pub p_th: f64,
    pub z_fr: usize,
    pub theta_fr: usize,
    pub constraints: ConstraintSet,
    pub sigma_mode: SigmaMode,
    pub gate: SpatialGate,
    pub feature: FeatureKind,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            nk: 3,
            p_th: 0.5,
            z_fr: 40,
            theta_fr: 30,
            constraints: ConstraintSet::OUT_BAL_LOOP,
            sigma_mode: SigmaMode::PerFrameStddev,
            gate: SpatialGate::Auto { factor: 3.0 },
            feature: FeatureKind::IntensityPatch { patch_radius: 5 },
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.nk < 1 {
            return bad("nk must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_th) {
            return bad("p_th must lie in [0, 1]");
        }
        if self.z_fr < 2 {
            return bad("z_fr must be at least 2");
        }
        if self.theta_fr < 3 {
            return bad("theta_fr must be at least 3");
        }
        if let SigmaMode::Fixed { sigma_x, sigma_f } = self.sigma_mode {
            if !(sigma_x > 0.0 && sigma_f > 0.0) {
                return bad("fixed sigmas must be positive");
            }
        }
        match self.gate {
            SpatialGate::Auto { factor } if !(factor > 0.0) => bad("gate factor must be positive"),
            SpatialGate::Radius { mm } if !(mm > 0.0) => bad("gate radius must be positive"),
            _ => self.constraints.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(frames: usize, n: usize) -> Vec<Vec<Point3>> {
        (0..frames)
            .map(|t| (0..n).map(|i| Point3::new(i as f64, t as f64, 0.0)).collect())
            .collect()
    }

    #[test]
    fn well_formed_sequence_has_no_violations() {
        let seq = FrameSequence::new(grid(3, 4), false);
        assert!(validate_sequence(&seq).is_empty());
    }

    #[test]
    fn empty_frame_is_reported() {
        let mut frames = grid(3, 4);
        frames[1].clear();
        let v = validate_sequence(&FrameSequence::new(frames, false));
        assert_eq!(v, vec![SequenceViolation::EmptyFrame { frame: 1 }]);
        assert!(v[0].to_string().contains("frame 2"));
    }

    #[test]
    fn nan_coordinate_is_reported_with_its_id() {
        let mut frames = grid(3, 4);
        frames[2][1].x = f64::NAN;
        let v = validate_sequence(&FrameSequence::new(frames, false));
        assert_eq!(
            v,
            vec![SequenceViolation::NonFinitePoint {
                id: PointId::new(2, 1)
            }]
        );
    }

    #[test]
    fn single_frame_is_too_short() {
        let v = validate_sequence(&FrameSequence::new(grid(1, 2), false));
        assert_eq!(v, vec![SequenceViolation::TooFewFrames { frames: 1 }]);
    }

    #[test]
    fn node_numbering_round_trips_with_unequal_frames() {
        let frames = vec![
            vec![Point3::default(); 2],
            vec![Point3::default(); 5],
            vec![Point3::default(); 1],
        ];
        let seq = FrameSequence::new(frames, true);
        for (n, id) in seq.ids().enumerate() {
            assert_eq!(seq.node_index(id), n);
            assert_eq!(seq.point_id(n), id);
        }
        assert_eq!(seq.num_points(), 8);
    }

    #[test]
    fn trajectory_rejects_misplaced_entries() {
        assert!(Trajectory::new(vec![PointId::new(0, 0), PointId::new(2, 0)], None).is_err());
        assert!(Trajectory::new(vec![PointId::new(0, 0)], Some(PointId::new(1, 0))).is_err());
        let t = Trajectory::new(vec![PointId::new(0, 3), PointId::new(1, 0)], Some(PointId::new(0, 2)))
            .unwrap();
        assert_eq!(t.start(), PointId::new(0, 3));
    }

    #[test]
    fn constraint_sets_parse_and_print() {
        let c: ConstraintSet = "out,bal,loop".parse().unwrap();
        assert_eq!(c, ConstraintSet::OUT_BAL_LOOP);
        assert_eq!(c.to_string(), "out,bal,loop");
        assert!("out,loop".parse::<ConstraintSet>().is_err());
        assert!("out,foo".parse::<ConstraintSet>().is_err());
        assert!(ConstraintSet::all_valid().iter().all(|c| c.is_valid()));
    }

    #[test]
    fn default_config_matches_best_combination_and_round_trips() {
        let c = TrackingConfig::default();
        assert_eq!((c.nk, c.z_fr, c.theta_fr), (3, 40, 30));
        assert_eq!(c.p_th, 0.5);
        let json = serde_json::to_string(&c).unwrap();
        let back: TrackingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }
}
