//! Flow-network construction: source edges into frame 1, temporal candidate
//! edges between consecutive frames, optional loop edges from the last frame
//! back to the first, probabilistic edge weights and outlier thresholding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::features::{FeatureProvider, FeatureVector};
use crate::model::{FrameSequence, Point3, PointId, SigmaMode, SpatialGate, TrackingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Source,
    Temporal,
    Loop,
}

/// Edge tail: the virtual source node or a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tail {
    Source,
    Point(PointId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: Tail,
    pub to: PointId,
    /// In `(0, 1]`. Source edges carry 1 but never enter the objective.
    pub weight: f64,
}

impl Edge {
    pub fn tail_point(&self) -> Option<PointId> {
        match self.from {
            Tail::Source => None,
            Tail::Point(p) => Some(p),
        }
    }
}

/// Weight normalizers of one frame transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigmas {
    pub sigma_x: f64,
    pub sigma_f: f64,
}

/// Euclidean and feature distances of the candidate pairs of one transition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionPairs {
    pub euclidean: Vec<f64>,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowNetwork {
    sequence: FrameSequence,
    edges: Vec<Edge>,
    closed_loop: bool,
    /// Temporal and loop edges leaving each node, in candidate-rank order.
    out_edges: Vec<Vec<usize>>,
    /// Source and temporal edges entering each node.
    in_edges: Vec<Vec<usize>>,
    /// Loop edges entering each frame-1 node.
    loop_in: Vec<Vec<usize>>,
    /// Transition `t -> t+1` for `t < T-1`, then the loop transition when present.
    sigmas: Vec<Sigmas>,
}

impl FlowNetwork {
    /// Assembles a network from explicit edges. Edge endpoints must lie in
    /// `sequence` and respect the kind's frame rule.
    pub fn from_edges(
        sequence: FrameSequence,
        edges: Vec<Edge>,
        closed_loop: bool,
        sigmas: Vec<Sigmas>,
    ) -> Result<Self, NetworkError> {
        let last = sequence.num_frames().saturating_sub(1);
        for e in &edges {
            if !sequence.contains(e.to) {
                return Err(NetworkError::InvalidInput(format!("edge head {} outside sequence", e.to)));
            }
            let ok = match (e.kind, e.from) {
                (EdgeKind::Source, Tail::Source) => e.to.frame == 0,
                (EdgeKind::Temporal, Tail::Point(p)) => sequence.contains(p) && e.to.frame == p.frame + 1,
                (EdgeKind::Loop, Tail::Point(p)) => {
                    closed_loop && sequence.contains(p) && p.frame == last && e.to.frame == 0
                }
                _ => false,
            };
            if !ok {
                return Err(NetworkError::InvalidInput(format!("malformed {:?} edge into {}", e.kind, e.to)));
            }
        }
        let n = sequence.num_points();
        let mut net = Self {
            out_edges: vec![Vec::new(); n],
            in_edges: vec![Vec::new(); n],
            loop_in: vec![Vec::new(); sequence.frame(0).len()],
            sequence,
            edges,
            closed_loop,
            sigmas,
        };
        net.index();
        Ok(net)
    }

    fn index(&mut self) {
        for v in self.out_edges.iter_mut().chain(&mut self.in_edges).chain(&mut self.loop_in) {
            v.clear();
        }
        for (k, e) in self.edges.iter().enumerate() {
            let head = self.sequence.node_index(e.to);
            match (e.kind, e.from) {
                (EdgeKind::Source, _) => self.in_edges[head].push(k),
                (EdgeKind::Temporal, Tail::Point(p)) => {
                    self.out_edges[self.sequence.node_index(p)].push(k);
                    self.in_edges[head].push(k);
                }
                (EdgeKind::Loop, Tail::Point(p)) => {
                    self.out_edges[self.sequence.node_index(p)].push(k);
                    self.loop_in[e.to.index].push(k);
                }
                _ => unreachable!("validated in from_edges"),
            }
        }
    }

    pub fn sequence(&self) -> &FrameSequence {
        &self.sequence
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_loop_edges(&self) -> bool {
        self.closed_loop
    }

    pub fn sigmas(&self) -> &[Sigmas] {
        &self.sigmas
    }

    /// Temporal (or, in the last frame, loop) edges leaving `id`.
    pub fn out_edges(&self, id: PointId) -> &[usize] {
        &self.out_edges[self.sequence.node_index(id)]
    }

    /// Source and temporal edges entering `id`.
    pub fn in_edges(&self, id: PointId) -> &[usize] {
        &self.in_edges[self.sequence.node_index(id)]
    }

    /// Loop edges entering frame-1 point `index`.
    pub fn loop_in_edges(&self, index: usize) -> &[usize] {
        &self.loop_in[index]
    }

    /// Candidate set η(t, i): heads of the edges leaving `id`.
    pub fn neighbors(&self, id: PointId) -> Vec<PointId> {
        self.out_edges(id).iter().map(|&k| self.edges[k].to).collect()
    }

    pub fn source_edge(&self, index: usize) -> Option<usize> {
        self.in_edges[index]
            .iter()
            .copied()
            .find(|&k| self.edges[k].kind == EdgeKind::Source)
    }
}

/// `exp(−‖xi−xj‖²/2σx²) · exp(−d(Fi,Fj)²/2σf²)`.
pub fn edge_weight(
    xi: &Point3,
    xj: &Point3,
    fi: &FeatureVector,
    fj: &FeatureVector,
    provider: &dyn FeatureProvider,
    sigma_x: f64,
    sigma_f: f64,
) -> Result<f64, NetworkError> {
    weight_from_distances(xi.distance(xj), provider.distance(fi, fj), Sigmas { sigma_x, sigma_f })
}

/// Edge weight from precomputed distances. Underflow is clamped to the
/// smallest positive double so every weight stays in `(0, 1]`.
pub fn weight_from_distances(dx: f64, df: f64, s: Sigmas) -> Result<f64, NetworkError> {
    if !(s.sigma_x > 0.0 && s.sigma_f > 0.0) {
        return Err(NetworkError::NonPositiveSigma {
            sigma_x: s.sigma_x,
            sigma_f: s.sigma_f,
        });
    }
    let w = (-(dx * dx) / (2.0 * s.sigma_x * s.sigma_x)).exp() * (-(df * df) / (2.0 * s.sigma_f * s.sigma_f)).exp();
    Ok(w.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Population standard deviation, floored at `1e-9·(1 + mean)`.
pub fn floored_stddev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1e-9;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt().max(1e-9 * (1.0 + mean))
}

/// Per-transition `(σx, σf)` from the candidate-pair distances.
pub fn compute_sigmas(pairs: &[TransitionPairs]) -> Vec<Sigmas> {
    pairs
        .iter()
        .map(|p| Sigmas {
            sigma_x: floored_stddev(&p.euclidean),
            sigma_f: floored_stddev(&p.feature),
        })
        .collect()
}

struct Candidate {
    from: usize,
    to: usize,
    dx: f64,
    df: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Displacement scale of a transition: the larger of the RMS nearest-neighbor
/// displacement and the median nearest-neighbor spacing inside the target.
fn displacement_scale(src: &[Point3], dst: &[Point3]) -> f64 {
    let nn = |p: &Point3, set: &[Point3], skip: Option<usize>| {
        set.iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, q)| p.distance_squared(q))
            .fold(f64::INFINITY, f64::min)
    };
    let rms = (src.par_iter().map(|p| nn(p, dst, None)).sum::<f64>() / src.len() as f64).sqrt();
    let spacing = if dst.len() > 1 {
        median(
            (0..dst.len())
                .into_par_iter()
                .map(|j| nn(&dst[j], dst, Some(j)).sqrt())
                .collect(),
        )
    } else {
        0.0
    };
    rms.max(spacing)
}

/// For every point of `src`, its `nk` best points of `dst`: feature distance,
/// then Euclidean distance, then smaller index. The spatial gate pre-filters
/// the pool but never leaves fewer than `nk` (or `|dst|`) candidates.
fn select_candidates(
    src: &[Point3],
    src_f: &[FeatureVector],
    dst: &[Point3],
    dst_f: &[FeatureVector],
    provider: &dyn FeatureProvider,
    nk: usize,
    gate: SpatialGate,
) -> Vec<Candidate> {
    let radius = match gate {
        SpatialGate::Auto { factor } => factor * displacement_scale(src, dst),
        SpatialGate::Radius { mm } => mm,
        SpatialGate::Unbounded => f64::INFINITY,
    };
    let keep = nk.min(dst.len());
    src.par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            let mut by_dist: Vec<(f64, usize)> = dst.iter().enumerate().map(|(j, q)| (p.distance(q), j)).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let in_ball = by_dist.iter().take_while(|(d, _)| *d <= radius).count();
            let pool = &by_dist[..in_ball.max(keep)];
            let mut scored: Vec<Candidate> = pool
                .iter()
                .map(|&(dx, j)| Candidate {
                    from: i,
                    to: j,
                    dx,
                    df: provider.distance(&src_f[i], &dst_f[j]),
                })
                .collect();
            scored.sort_by(|a, b| {
                a.df.total_cmp(&b.df)
                    .then(a.dx.total_cmp(&b.dx))
                    .then(a.to.cmp(&b.to))
            });
            scored.truncate(keep);
            scored
        })
        .collect::<Vec<_>>()
}

/// Builds the network for `seq` from per-point `features` (as produced by
/// [`crate::features::extract_features`]). Loop edges are added when the
/// configured constraints request them.
pub fn build_network(
    seq: &FrameSequence,
    features: &[Vec<FeatureVector>],
    provider: &dyn FeatureProvider,
    config: &TrackingConfig,
) -> Result<FlowNetwork, NetworkError> {
    seq.ensure_valid().map_err(|e| NetworkError::InvalidInput(e.to_string()))?;
    config.validate().map_err(|e| NetworkError::InvalidInput(e.to_string()))?;
    if features.len() != seq.num_frames() || features.iter().zip(seq.frames()).any(|(f, p)| f.len() != p.len()) {
        return Err(NetworkError::InvalidInput("feature layout does not match the sequence".into()));
    }
    let closed_loop = config.constraints.closed_loop;
    let last = seq.num_frames() - 1;

    // (from frame, to frame) per transition
    let mut transitions: Vec<(usize, usize)> = (0..last).map(|t| (t, t + 1)).collect();
    if closed_loop {
        transitions.push((last, 0));
    }
    let candidates: Vec<Vec<Candidate>> = transitions
        .iter()
        .map(|&(a, b)| {
            select_candidates(seq.frame(a), &features[a], seq.frame(b), &features[b], provider, config.nk, config.gate)
        })
        .collect();

    let sigmas = match config.sigma_mode {
        SigmaMode::PerFrameStddev => compute_sigmas(
            &candidates
                .iter()
                .map(|c| TransitionPairs {
                    euclidean: c.iter().map(|x| x.dx).collect(),
                    feature: c.iter().map(|x| x.df).collect(),
                })
                .collect::<Vec<_>>(),
        ),
        SigmaMode::Fixed { sigma_x, sigma_f } => vec![Sigmas { sigma_x, sigma_f }; transitions.len()],
    };

    let mut edges: Vec<Edge> = (0..seq.frame(0).len())
        .map(|i| Edge {
            kind: EdgeKind::Source,
            from: Tail::Source,
            to: PointId::new(0, i),
            weight: 1.0,
        })
        .collect();
    for (k, (&(a, b), cands)) in transitions.iter().zip(&candidates).enumerate() {
        let kind = if b == a + 1 { EdgeKind::Temporal } else { EdgeKind::Loop };
        for c in cands {
            edges.push(Edge {
                kind,
                from: Tail::Point(PointId::new(a, c.from)),
                to: PointId::new(b, c.to),
                weight: weight_from_distances(c.dx, c.df, sigmas[k])?,
            });
        }
    }
    FlowNetwork::from_edges(seq.clone(), edges, closed_loop, sigmas)
}

/// Drops temporal and loop edges lighter than `p_th`; source edges stay.
pub fn threshold_edges(network: &FlowNetwork, p_th: f64) -> FlowNetwork {
    let edges = network
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Source || e.weight >= p_th)
        .copied()
        .collect();
    let mut out = FlowNetwork {
        sequence: network.sequence.clone(),
        edges,
        closed_loop: network.closed_loop,
        out_edges: network.out_edges.clone(),
        in_edges: network.in_edges.clone(),
        loop_in: network.loop_in.clone(),
        sigmas: network.sigmas.clone(),
    };
    out.index();
    out
}
