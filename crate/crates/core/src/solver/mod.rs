//! Solving the flow LP, verifying the result and turning it into
//! trajectories.
//!
//! The default backend recasts each constraint set as a min-cost circulation
//! and runs a network simplex on it; the dense backend solves the explicit LP
//! from [`assemble_lp`] with a bounded primal simplex. Both results are
//! checked against the explicit rows before they are accepted.

mod dense;
pub mod lp;
pub mod network_simplex;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::model::{ConstraintSet, PointId, Trajectory};
use crate::network::{EdgeKind, FlowNetwork, Tail};
pub use dense::{solve_dense, DenseFailure, DenseOutcome};
pub use lp::{assemble_lp, LpProblem, LpRow, RowKind, Sense};
use network_simplex::{min_cost_circulation, Arc};

/// Deviation from the nearest integer above which a solution is rejected.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Largest accepted constraint residual.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Weights are scaled so the largest one maps to this integer cost.
const COST_SCALE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    NetworkSimplex,
    DenseSimplex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub backend: Backend,
    pub iterations: usize,
    pub max_residual: f64,
    pub max_fractional_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution {
    /// One entry per network edge.
    pub flow: Vec<bool>,
    /// `Σ w_e f_e` over temporal and loop edges.
    pub objective: f64,
    pub constraints: ConstraintSet,
    pub stats: SolverStats,
}

impl FlowSolution {
    pub fn values(&self) -> Vec<f64> {
        self.flow.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }

    pub fn active_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.flow.iter().enumerate().filter(|(_, &f)| f).map(|(k, _)| k)
    }
}

pub fn solve_flow(network: &FlowNetwork, constraints: ConstraintSet) -> Result<FlowSolution, SolverError> {
    solve_flow_with(network, constraints, Backend::NetworkSimplex)
}

pub fn solve_flow_with(
    network: &FlowNetwork,
    constraints: ConstraintSet,
    backend: Backend,
) -> Result<FlowSolution, SolverError> {
    let lp = assemble_lp(network, constraints)?;
    let (x, iterations) = match backend {
        Backend::DenseSimplex => {
            let out = solve_dense(&lp).map_err(|e| SolverError::SolverFailure {
                reason: format!("dense simplex: {e:?}"),
                max_residual: f64::NAN,
            })?;
            (out.x, out.iterations)
        }
        Backend::NetworkSimplex => circulation_flow(network, constraints),
    };
    finish(network, constraints, &lp, x, backend, iterations)
}

fn finish(
    network: &FlowNetwork,
    constraints: ConstraintSet,
    lp: &LpProblem,
    x: Vec<f64>,
    backend: Backend,
    iterations: usize,
) -> Result<FlowSolution, SolverError> {
    let deviation = x.iter().map(|v| (v - v.round()).abs()).fold(0.0, f64::max);
    if deviation >= INTEGRALITY_TOL {
        return Err(SolverError::NonIntegralSolution {
            max_deviation: deviation,
        });
    }
    let mut rounded: Vec<f64> = x.iter().map(|v| v.round()).collect();
    if !constraints.bal {
        // Source edges are unconstrained without balance; mark the starts
        // that actually emit flow so extraction can find them.
        for i in 0..network.sequence().frame(0).len() {
            if let Some(s) = network.source_edge(i) {
                let id = PointId::new(0, i);
                let emits = network.out_edges(id).iter().any(|&k| rounded[k] > 0.5);
                rounded[s] = if emits { 1.0 } else { 0.0 };
            }
        }
    }
    let max_residual = lp.max_residual(&rounded);
    if max_residual > RESIDUAL_TOL {
        return Err(SolverError::SolverFailure {
            reason: "rounded flow violates the constraint rows".into(),
            max_residual,
        });
    }
    Ok(FlowSolution {
        flow: rounded.iter().map(|&v| v > 0.5).collect(),
        objective: lp.objective_value(&rounded),
        constraints,
        stats: SolverStats {
            backend,
            iterations,
            max_residual,
            max_fractional_deviation: deviation,
        },
    })
}

/// Builds the circulation equivalent of the LP, solves it and maps arc
/// flows back onto network edges.
fn circulation_flow(network: &FlowNetwork, constraints: ConstraintSet) -> (Vec<f64>, usize) {
    let seq = network.sequence();
    let n = seq.num_points();
    let last = seq.num_frames() - 1;
    let edges = network.edges();
    let w_max = edges
        .iter()
        .filter(|e| e.kind != EdgeKind::Source)
        .map(|e| e.weight)
        .fold(0.0, f64::max);
    let cost = |w: f64| -> i64 {
        if w_max > 0.0 {
            -((w / w_max * COST_SCALE).round() as i64)
        } else {
            0
        }
    };

    // node layout: [in_v | out_v] for every point, the root, then one
    // loop gadget node per last-frame point when needed
    let root = 2 * n;
    let v_in = |id: PointId| seq.node_index(id);
    let v_out = |id: PointId| n + seq.node_index(id);
    let mut arcs: Vec<Arc> = Vec::new();
    // arc index carrying each edge's flow
    let mut edge_arc = vec![usize::MAX; edges.len()];
    let mut split_arc = vec![usize::MAX; n];
    let mut num_nodes = root + 1;

    if !constraints.bal {
        // Transitions decouple: tails draw one unit from the root, heads
        // return at most one (C_in) or any number of units.
        for id in seq.ids() {
            if !network.out_edges(id).is_empty() {
                arcs.push(Arc { from: root, to: v_out(id), cap: 1, cost: 0 });
            }
            let indeg = network.in_edges(id).len() as i64;
            if indeg > 0 {
                let cap = if constraints.inc { 1 } else { indeg };
                arcs.push(Arc { from: v_in(id), to: root, cap, cost: 0 });
            }
        }
        for (k, e) in edges.iter().enumerate() {
            let Tail::Point(p) = e.from else { continue };
            let to = if e.kind == EdgeKind::Loop { root } else { v_in(e.to) };
            edge_arc[k] = arcs.len();
            arcs.push(Arc { from: v_out(p), to, cap: 1, cost: cost(e.weight) });
        }
    } else {
        for id in seq.ids() {
            split_arc[seq.node_index(id)] = arcs.len();
            arcs.push(Arc { from: v_in(id), to: v_out(id), cap: 1, cost: 0 });
        }
        for (k, e) in edges.iter().enumerate() {
            match (e.kind, e.from) {
                (EdgeKind::Source, _) => {
                    if !constraints.closed_loop {
                        edge_arc[k] = arcs.len();
                        arcs.push(Arc { from: root, to: v_in(e.to), cap: 1, cost: 0 });
                    }
                }
                (EdgeKind::Temporal, Tail::Point(p)) => {
                    edge_arc[k] = arcs.len();
                    arcs.push(Arc { from: v_out(p), to: v_in(e.to), cap: 1, cost: cost(e.weight) });
                }
                (EdgeKind::Loop, Tail::Point(p)) => {
                    edge_arc[k] = arcs.len();
                    if constraints.closed_loop {
                        arcs.push(Arc { from: v_out(p), to: v_in(e.to), cap: 1, cost: cost(e.weight) });
                    } else {
                        // Loop edges only share the tail's C_out row here, so
                        // they live in their own small gadget.
                        let aux = root + 1 + p.index;
                        arcs.push(Arc { from: aux, to: root, cap: 1, cost: cost(e.weight) });
                    }
                }
                _ => unreachable!("network edges are validated on construction"),
            }
        }
        if !constraints.closed_loop {
            for (i, _) in seq.frame(last).iter().enumerate() {
                let id = PointId::new(last, i);
                arcs.push(Arc { from: v_out(id), to: root, cap: 1, cost: 0 });
                if !network.out_edges(id).is_empty() {
                    let aux = root + 1 + i;
                    arcs.push(Arc { from: root, to: aux, cap: 1, cost: 0 });
                }
            }
            num_nodes += seq.frame(last).len();
        }
    }

    let circ = min_cost_circulation(num_nodes, &arcs);
    let mut x = vec![0.0; edges.len()];
    for (k, e) in edges.iter().enumerate() {
        if edge_arc[k] != usize::MAX {
            x[k] = circ.flow[edge_arc[k]] as f64;
        } else if e.kind == EdgeKind::Source && constraints.closed_loop {
            x[k] = circ.flow[split_arc[seq.node_index(e.to)]] as f64;
        }
    }
    (x, circ.pivots)
}

/// Trajectories recovered from a binary flow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub trajectories: Vec<Trajectory>,
    /// Walks that stopped before the last frame (only without balance).
    pub incomplete: usize,
    /// Points visited by more than one trajectory (only without balance).
    pub shared_nodes: Vec<PointId>,
}

/// Walks active flow from every frame-1 point with source flow.
///
/// With balance every walk must reach the last frame, else [`SolverError::BrokenPath`].
/// Without balance the walks may stop early (dropped and counted) or merge
/// (kept and reported).
pub fn extract_trajectories(solution: &FlowSolution, network: &FlowNetwork) -> Result<Extraction, SolverError> {
    let seq = network.sequence();
    let last = seq.num_frames() - 1;
    let edges = network.edges();
    let strict = solution.constraints.bal;
    let mut out = Extraction::default();
    let mut visits: BTreeMap<PointId, usize> = BTreeMap::new();

    for i in 0..seq.frame(0).len() {
        let start = PointId::new(0, i);
        let Some(s) = network.source_edge(i) else { continue };
        if !solution.flow[s] {
            continue;
        }
        let mut points = vec![start];
        let mut closure = None;
        let mut cur = start;
        let mut complete = true;
        loop {
            let mut active = network.out_edges(cur).iter().copied().filter(|&k| solution.flow[k]);
            let next = active.next();
            if active.next().is_some() {
                return Err(SolverError::BrokenPath {
                    at: cur,
                    reason: "more than one outgoing unit".into(),
                });
            }
            if cur.frame == last {
                closure = next.map(|k| edges[k].to);
                break;
            }
            match next {
                Some(k) => {
                    cur = edges[k].to;
                    points.push(cur);
                }
                None if strict => {
                    return Err(SolverError::BrokenPath {
                        at: cur,
                        reason: "flow enters but does not leave".into(),
                    })
                }
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            out.incomplete += 1;
            continue;
        }
        if strict && solution.constraints.closed_loop && closure.is_none() {
            return Err(SolverError::BrokenPath {
                at: cur,
                reason: "trajectory does not close".into(),
            });
        }
        for p in &points {
            *visits.entry(*p).or_default() += 1;
        }
        let traj = Trajectory::new(points, closure).expect("walk advances one frame per step");
        out.trajectories.push(traj);
    }
    out.shared_nodes = visits.into_iter().filter(|&(_, c)| c > 1).map(|(p, _)| p).collect();
    if strict {
        if let Some(&p) = out.shared_nodes.first() {
            return Err(SolverError::BrokenPath {
                at: p,
                reason: "node shared by two trajectories".into(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: RowKind,
    pub node: Option<PointId>,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(p) => write!(f, "{} violated at {} by {:.3e}", self.kind, p, self.residual),
            None => write!(f, "{} violated by {:.3e}", self.kind, self.residual),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub violations: Vec<Violation>,
    /// Edges whose value is not 0 or 1 (or lies outside `[0, 1]`).
    pub non_binary: Vec<usize>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.non_binary.is_empty()
    }
}

pub fn verify_solution(
    solution: &FlowSolution,
    network: &FlowNetwork,
    constraints: ConstraintSet,
) -> Result<VerificationReport, SolverError> {
    verify_flow_values(&solution.values(), network, constraints)
}

/// Checks arbitrary edge values against every row of the LP for `constraints`.
pub fn verify_flow_values(
    values: &[f64],
    network: &FlowNetwork,
    constraints: ConstraintSet,
) -> Result<VerificationReport, SolverError> {
    let lp = assemble_lp(network, constraints)?;
    assert_eq!(values.len(), lp.num_vars(), "one value per edge");
    let violations = lp
        .rows
        .iter()
        .filter_map(|r| {
            let residual = r.violation(values);
            (residual > RESIDUAL_TOL).then_some(Violation {
                kind: r.kind,
                node: r.node,
                residual,
            })
        })
        .collect();
    let non_binary = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v == 0.0 || v == 1.0))
        .map(|(k, _)| k)
        .collect();
    Ok(VerificationReport {
        violations,
        non_binary,
    })
}

/// Edge indices selected by a solution, as a set (handy for comparisons).
pub fn selected_edges(solution: &FlowSolution) -> BTreeSet<usize> {
    solution.active_edges().collect()
}
