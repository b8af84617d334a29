//! Dense bounded-variable primal simplex for the explicit LP.
//!
//! Every `Le` row has a non-negative right-hand side and every `Eq` row a
//! zero one, so the all-slack basis with structurals at their lower bound is
//! feasible and no phase 1 is needed. Used to check the LP relaxation
//! directly rather than through a network reformulation.

use super::lp::{LpProblem, Sense};

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-10;
/// Degenerate pivots in a row before switching to Bland's rule.
const BLAND_AFTER: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DenseFailure {
    Unbounded,
    IterationLimit,
    InfeasibleStart,
}

pub fn solve_dense(lp: &LpProblem) -> Result<DenseOutcome, DenseFailure> {
    let n = lp.num_vars();
    let m = lp.rows.len();
    let width = n + m;

    let mut upper = lp.upper.clone();
    for r in &lp.rows {
        if r.rhs < 0.0 || (r.sense == Sense::Eq && r.rhs != 0.0) {
            return Err(DenseFailure::InfeasibleStart);
        }
        upper.push(match r.sense {
            Sense::Le => f64::INFINITY,
            Sense::Eq => 0.0,
        });
    }
    // minimize -w'x
    let mut d = vec![0.0; width];
    for j in 0..n {
        d[j] = -lp.objective[j];
    }
    let mut tab = vec![0.0; m * width];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            tab[i * width + j] += a;
        }
        tab[i * width + n + i] = 1.0;
    }
    let mut basis: Vec<usize> = (n..width).collect();
    let mut value: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
    let mut at_upper = vec![false; width];
    let mut is_basic = vec![false; width];
    for &b in &basis {
        is_basic[b] = true;
    }

    let limit = 50 * (width + 10) * (m + 10);
    let mut degenerate = 0usize;
    let mut iterations = 0usize;
    loop {
        if iterations >= limit {
            return Err(DenseFailure::IterationLimit);
        }
        let bland = degenerate >= BLAND_AFTER;

        let mut entering = None;
        let mut best = 0.0;
        for j in 0..width {
            if is_basic[j] || upper[j] <= 0.0 {
                continue;
            }
            let gain = if at_upper[j] { d[j] } else { -d[j] };
            if gain > PRICE_TOL {
                if bland {
                    entering = Some(j);
                    break;
                }
                if gain > best {
                    best = gain;
                    entering = Some(j);
                }
            }
        }
        let Some(j) = entering else { break };
        let dir = if at_upper[j] { -1.0 } else { 1.0 };

        // ratio test, starting from the entering variable's own bound flip
        let mut theta = upper[j];
        let mut leave: Option<(usize, bool)> = None;
        for r in 0..m {
            let a = dir * tab[r * width + j];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let b = basis[r];
            let (room, to_upper) = if a > 0.0 {
                (value[r].max(0.0) / a, false)
            } else if upper[b].is_finite() {
                ((upper[b] - value[r]).max(0.0) / -a, true)
            } else {
                continue;
            };
            let better = match leave {
                _ if room < theta - 1e-12 => true,
                Some((r0, _)) if room <= theta + 1e-12 => bland && b < basis[r0],
                _ => false,
            };
            if better {
                theta = room;
                leave = Some((r, to_upper));
            }
        }
        if !theta.is_finite() {
            return Err(DenseFailure::Unbounded);
        }
        iterations += 1;
        if theta <= 1e-12 {
            degenerate += 1;
        } else {
            degenerate = 0;
        }

        for r in 0..m {
            value[r] -= dir * theta * tab[r * width + j];
        }
        match leave {
            None => {
                at_upper[j] = !at_upper[j];
            }
            Some((r, to_upper)) => {
                let entering_value = if at_upper[j] { upper[j] - theta } else { theta };
                let out = basis[r];
                is_basic[out] = false;
                at_upper[out] = to_upper;
                is_basic[j] = true;
                at_upper[j] = false;
                basis[r] = j;
                value[r] = entering_value;

                let p = tab[r * width + j];
                let (before, rest) = tab.split_at_mut(r * width);
                let (prow, after) = rest.split_at_mut(width);
                for v in prow.iter_mut() {
                    *v /= p;
                }
                for row in before.chunks_mut(width).chain(after.chunks_mut(width)) {
                    let f = row[j];
                    if f != 0.0 {
                        for (x, &y) in row.iter_mut().zip(prow.iter()) {
                            *x -= f * y;
                        }
                        row[j] = 0.0;
                    }
                }
                let f = d[j];
                if f != 0.0 {
                    for (x, &y) in d.iter_mut().zip(prow.iter()) {
                        *x -= f * y;
                    }
                    d[j] = 0.0;
                }
            }
        }
    }

    let mut x = vec![0.0; n];
    for j in 0..n {
        if at_upper[j] {
            x[j] = upper[j];
        }
    }
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = value[r];
        }
    }
    Ok(DenseOutcome { x, iterations })
}
