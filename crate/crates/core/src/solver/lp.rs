//! Explicit LP form of the flow problem: one variable per network edge,
//! `0 <= f <= 1`, and one row per enabled per-node constraint.

use std::fmt;

use crate::error::SolverError;
use crate::model::{ConstraintSet, PointId};
use crate::network::{EdgeKind, FlowNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowKind {
    /// Σ outgoing ≤ 1.
    Out,
    /// Σ incoming (source + temporal) ≤ 1.
    In,
    /// −Σ incoming + Σ outgoing = 0.
    Balance,
    /// Last-frame intake ≤ 1 when trajectories end there.
    Sink,
    /// −Σ loop-in + Σ outgoing = 0 at a frame-1 node.
    LoopReturn,
    /// −Σ source + Σ loop = 0 over the whole network.
    LoopTotal,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Out => "C_out",
            Self::In => "C_in",
            Self::Balance => "C_bal",
            Self::Sink => "C_bal(sink)",
            Self::LoopReturn => "C_loop(return)",
            Self::LoopTotal => "C_loop(total)",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpRow {
    pub kind: RowKind,
    pub node: Option<PointId>,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LpRow {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let r = self.activity(x) - self.rhs;
        match self.sense {
            Sense::Le => r.max(0.0),
            Sense::Eq => r.abs(),
        }
    }
}

/// `maximize c'x  s.t. rows, 0 <= x <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row or bound violation of `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = x
            .iter()
            .zip(&self.upper)
            .map(|(&v, &u)| (-v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }
}

fn row(kind: RowKind, node: Option<PointId>, minus: &[usize], plus: &[usize], sense: Sense, rhs: f64) -> LpRow {
    let coeffs = minus.iter().map(|&j| (j, -1.0)).chain(plus.iter().map(|&j| (j, 1.0))).collect();
    LpRow {
        kind,
        node,
        coeffs,
        sense,
        rhs,
    }
}

/// Builds the LP for `network` under `constraints`. Variables are the
/// network's edges in order; source edges have zero objective weight.
///
/// Rows with no coefficients are omitted. Loop edges count as outgoing at the
/// last frame and are tied to frame 1 through the loop rows instead of the
/// incoming sums.
pub fn assemble_lp(network: &FlowNetwork, constraints: ConstraintSet) -> Result<LpProblem, SolverError> {
    if !constraints.is_valid() {
        return Err(SolverError::InvalidConstraintSet("loop constraints require balance".into()));
    }
    if constraints.closed_loop && !network.has_loop_edges() {
        return Err(SolverError::InvalidConstraintSet(
            "loop constraints requested but the network has no loop edges".into(),
        ));
    }
    let objective = network
        .edges()
        .iter()
        .map(|e| if e.kind == EdgeKind::Source { 0.0 } else { e.weight })
        .collect();
    let upper = vec![1.0; network.num_edges()];
    let seq = network.sequence();
    let last = seq.num_frames() - 1;
    let mut rows = Vec::new();

    for id in seq.ids() {
        let outs = network.out_edges(id);
        let ins = network.in_edges(id);
        if !outs.is_empty() {
            rows.push(row(RowKind::Out, Some(id), &[], outs, Sense::Le, 1.0));
        }
        if constraints.inc && !ins.is_empty() {
            rows.push(row(RowKind::In, Some(id), &[], ins, Sense::Le, 1.0));
        }
        if constraints.bal && !(ins.is_empty() && outs.is_empty()) {
            if id.frame < last || constraints.closed_loop {
                rows.push(row(RowKind::Balance, Some(id), ins, outs, Sense::Eq, 0.0));
            } else if !constraints.inc && !ins.is_empty() {
                rows.push(row(RowKind::Sink, Some(id), &[], ins, Sense::Le, 1.0));
            }
        }
        if constraints.closed_loop && id.frame == 0 {
            let back = network.loop_in_edges(id.index);
            if !(back.is_empty() && outs.is_empty()) {
                rows.push(row(RowKind::LoopReturn, Some(id), back, outs, Sense::Eq, 0.0));
            }
        }
    }
    if constraints.closed_loop {
        let mut src = Vec::new();
        let mut lp = Vec::new();
        for (k, e) in network.edges().iter().enumerate() {
            match e.kind {
                EdgeKind::Source => src.push(k),
                EdgeKind::Loop => lp.push(k),
                EdgeKind::Temporal => {}
            }
        }
        if !(src.is_empty() && lp.is_empty()) {
            rows.push(row(RowKind::LoopTotal, None, &src, &lp, Sense::Eq, 0.0));
        }
    }
    Ok(LpProblem { objective, upper, rows })
}
