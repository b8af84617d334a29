//! Dense displacement fields from sparse samples with compactly supported
//! Wendland C2 radial basis functions.
//!
//! `U(x) = Σ_k c_k φ(|x − p_k| / R)` with one 3-vector coefficient per center.
//! Fitting minimizes the data misfit plus an L1 penalty on the coefficients
//! and quadratic divergence and gradient penalties evaluated at collocation
//! points.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::model::Point3;

/// Relative objective decrease at which the L1 solver stops.
pub const OBJECTIVE_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 20_000;
pub const DEFAULT_GRID_POINTS: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    WendlandC2,
}

/// Wendland C2 profile `(1−q)⁴(4q+1)`, zero for `q >= 1`.
pub fn wendland_c2(q: f64) -> f64 {
    if q >= 1.0 {
        0.0
    } else {
        let a = 1.0 - q;
        a * a * a * a * (4.0 * q + 1.0)
    }
}

/// `dφ/dq = −20 q (1−q)³`.
pub fn wendland_c2_derivative(q: f64) -> f64 {
    if q >= 1.0 {
        0.0
    } else {
        let a = 1.0 - q;
        -20.0 * q * a * a * a
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RbfModelRepr", into = "RbfModelRepr")]
pub struct RbfModel {
    pub kernel: Kernel,
    pub support_radius: f64,
    pub centers: Vec<Point3>,
    pub coefficients: Vec<[f64; 3]>,
    index: CellIndex,
}

impl PartialEq for RbfModel {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.support_radius == other.support_radius
            && self.centers == other.centers
            && self.coefficients == other.coefficients
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbfModelRepr {
    kernel: Kernel,
    support_radius: f64,
    centers: Vec<Point3>,
    coefficients: Vec<[f64; 3]>,
}

impl TryFrom<RbfModelRepr> for RbfModel {
    type Error = FieldError;

    fn try_from(r: RbfModelRepr) -> Result<Self, FieldError> {
        Self::new(r.centers, r.coefficients, r.support_radius)
    }
}

impl From<RbfModel> for RbfModelRepr {
    fn from(m: RbfModel) -> Self {
        Self {
            kernel: m.kernel,
            support_radius: m.support_radius,
            centers: m.centers,
            coefficients: m.coefficients,
        }
    }
}

impl RbfModel {
    pub fn new(centers: Vec<Point3>, coefficients: Vec<[f64; 3]>, support_radius: f64) -> Result<Self, FieldError> {
        if centers.len() != coefficients.len() {
            return Err(FieldError::InvalidInput(format!(
                "{} centers but {} coefficients",
                centers.len(),
                coefficients.len()
            )));
        }
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(FieldError::InvalidInput(format!("support radius {support_radius} must be positive")));
        }
        let index = CellIndex::new(&centers, support_radius);
        Ok(Self {
            kernel: Kernel::WendlandC2,
            support_radius,
            centers,
            coefficients,
            index,
        })
    }

    fn for_each_near(&self, x: &Point3, mut f: impl FnMut(usize)) {
        self.index.for_each_within(&self.centers, x, self.support_radius, &mut f)
    }

    pub fn coefficient(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.coefficients[k])
    }

    /// Number of centers whose coefficient has L1 norm above `tol`.
    pub fn active_centers(&self, tol: f64) -> usize {
        self.coefficients
            .iter()
            .filter(|c| c.iter().map(|v| v.abs()).sum::<f64>() > tol)
            .count()
    }
}

pub fn evaluate_field(model: &RbfModel, x: &Point3) -> Vector3<f64> {
    let r = model.support_radius;
    let mut u = Vector3::zeros();
    model.for_each_near(x, |k| {
        let q = x.distance(&model.centers[k]) / r;
        let w = wendland_c2(q);
        if w != 0.0 {
            u += model.coefficient(k) * w;
        }
    });
    u
}

/// `J[a][b] = ∂U_a / ∂x_b`.
pub fn evaluate_jacobian(model: &RbfModel, x: &Point3) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    model.for_each_near(x, |k| {
        if let Some(g) = kernel_gradient(&model.centers[k], x, model.support_radius) {
            j += model.coefficient(k) * g.transpose();
        }
    });
    j
}

pub fn evaluate_divergence(model: &RbfModel, x: &Point3) -> f64 {
    evaluate_jacobian(model, x).trace()
}

/// `∇_x φ(|x − p| / R) = −20 (1−q)³ (x − p) / R²`, `None` outside the support.
fn kernel_gradient(p: &Point3, x: &Point3, r: f64) -> Option<Vector3<f64>> {
    let d = x.to_vector() - p.to_vector();
    let q = d.norm() / r;
    if q >= 1.0 {
        return None;
    }
    let a = 1.0 - q;
    Some(d * (-20.0 * a * a * a / (r * r)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationWeights {
    pub lambda_sparse: f64,
    pub lambda_div: f64,
    pub lambda_grad: f64,
}

impl RegularizationWeights {
    pub const NONE: Self = Self {
        lambda_sparse: 0.0,
        lambda_div: 0.0,
        lambda_grad: 0.0,
    };

    pub fn validate(&self) -> Result<(), FieldError> {
        let all = [self.lambda_sparse, self.lambda_div, self.lambda_grad];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(FieldError::InvalidInput(format!("regularization weights must be non-negative: {self:?}")))
        }
    }
}

impl Default for RegularizationWeights {
    fn default() -> Self {
        Self {
            lambda_sparse: 1e-3,
            lambda_div: 1e-2,
            lambda_grad: 1e-3,
        }
    }
}

/// A known displacement at a position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub position: Point3,
    pub displacement: Vector3<f64>,
}

impl FieldSample {
    pub fn new(position: Point3, displacement: Vector3<f64>) -> Self {
        Self { position, displacement }
    }
}

/// Bucket grid with cell size equal to the query radius.
#[derive(Clone, Debug)]
struct CellIndex {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl CellIndex {
    fn new(points: &[Point3], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (k, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(k);
        }
        Self { cell, buckets }
    }

    fn key(p: &Point3, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    /// Visits indices with distance `< radius` in a fixed order.
    fn for_each_within(&self, points: &[Point3], x: &Point3, radius: f64, f: &mut impl FnMut(usize)) {
        let reach = (radius / self.cell).ceil() as i64;
        let c = Self::key(x, self.cell);
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(b) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &k in b {
                            if points[k].distance_squared(x) < r2 {
                                f(k);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Twice the median nearest-neighbor spacing among `centers`.
pub fn default_support_radius(centers: &[Point3]) -> Option<f64> {
    let mut nn = nearest_neighbor_distances(centers);
    nn.retain(|d| *d > 0.0 && d.is_finite());
    if nn.is_empty() {
        return None;
    }
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    let median = if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    };
    Some(2.0 * median)
}

pub(crate) fn nearest_neighbor_distances(points: &[Point3]) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance_squared(q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Uniform grid of at most `max_points` nodes spanning the bounding box of
/// `points`. Flat extents collapse to a single layer.
pub fn default_collocation_grid(points: &[Point3], max_points: usize) -> Vec<Point3> {
    if points.is_empty() || max_points == 0 {
        return Vec::new();
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    let longest = ext.iter().cloned().fold(0.0, f64::max);
    if longest <= 0.0 {
        return vec![points[0]];
    }
    let counts = |h: f64| -> [usize; 3] {
        let mut n = [1usize; 3];
        for a in 0..3 {
            n[a] = (ext[a] / h).floor() as usize + 1;
        }
        n
    };
    // shrink the resolution until the node budget is met
    let mut h = longest / (max_points as f64).max(1.0);
    loop {
        let n = counts(h);
        if n[0] * n[1] * n[2] <= max_points {
            break;
        }
        h *= 1.05;
    }
    let n = counts(h);
    let step = |a: usize| if n[a] > 1 { ext[a] / (n[a] - 1) as f64 } else { 0.0 };
    let (sx, sy, sz) = (step(0), step(1), step(2));
    let mid = |a: usize| if n[a] > 1 { lo[a] } else { 0.5 * (lo[a] + hi[a]) };
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                out.push(Point3::new(
                    mid(0) + i as f64 * sx,
                    mid(1) + j as f64 * sy,
                    mid(2) + k as f64 * sz,
                ));
            }
        }
    }
    out
}

/// Block-sparse symmetric system `H c = r` with 3×3 blocks per center pair.
struct BlockSystem {
    /// Sorted neighbor centers of each center (including itself).
    cols: Vec<Vec<usize>>,
    blocks: Vec<Vec<Matrix3<f64>>>,
    rhs: Vec<Vector3<f64>>,
    data_norm: f64,
}

impl BlockSystem {
    fn add(&mut self, k: usize, l: usize, b: &Matrix3<f64>) {
        let pos = self.cols[k].binary_search(&l).expect("pair within twice the support");
        self.blocks[k][pos] += b;
    }

    fn apply(&self, c: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.cols
            .par_iter()
            .zip(&self.blocks)
            .map(|(cols, blocks)| cols.iter().zip(blocks).map(|(&l, b)| b * c[l]).sum())
            .collect()
    }

    fn diag(&self, k: usize) -> &Matrix3<f64> {
        let pos = self.cols[k].binary_search(&k).expect("diagonal present");
        &self.blocks[k][pos]
    }

    fn quadratic_objective(&self, c: &[Vector3<f64>], hc: &[Vector3<f64>]) -> f64 {
        let mut j = self.data_norm;
        for k in 0..c.len() {
            j += c[k].dot(&hc[k]) - 2.0 * c[k].dot(&self.rhs[k]);
        }
        j
    }
}

fn assemble(
    samples: &[FieldSample],
    centers: &[Point3],
    r: f64,
    reg: &RegularizationWeights,
    grid: &[Point3],
) -> Result<BlockSystem, FieldError> {
    let index = CellIndex::new(centers, r);
    let near_centers = |x: &Point3| {
        let mut v = Vec::new();
        index.for_each_within(centers, x, r, &mut |k| v.push(k));
        v.sort_unstable();
        v
    };
    let mut cols: Vec<Vec<usize>> = centers
        .par_iter()
        .map(|p| {
            let mut v = Vec::new();
            index.for_each_within(centers, p, 2.0 * r, &mut |k| v.push(k));
            v.sort_unstable();
            v
        })
        .collect();
    for (k, c) in cols.iter_mut().enumerate() {
        if c.binary_search(&k).is_err() {
            let pos = c.binary_search(&k).unwrap_err();
            c.insert(pos, k);
        }
    }
    let blocks = cols.iter().map(|c| vec![Matrix3::zeros(); c.len()]).collect();
    let mut sys = BlockSystem {
        cols,
        blocks,
        rhs: vec![Vector3::zeros(); centers.len()],
        data_norm: samples.iter().map(|s| s.displacement.norm_squared()).sum(),
    };

    let mut touched = false;
    for s in samples {
        let near = near_centers(&s.position);
        let vals: Vec<f64> = near
            .iter()
            .map(|&k| wendland_c2(s.position.distance(&centers[k]) / r))
            .collect();
        for (a, &k) in near.iter().enumerate() {
            if vals[a] == 0.0 {
                continue;
            }
            touched = true;
            sys.rhs[k] += s.displacement * vals[a];
            for (b, &l) in near.iter().enumerate() {
                sys.add(k, l, &(Matrix3::identity() * (vals[a] * vals[b])));
            }
        }
    }
    if !touched {
        return Err(FieldError::DegenerateSystem);
    }

    if reg.lambda_div > 0.0 || reg.lambda_grad > 0.0 {
        let contributions: Vec<(Vec<usize>, Vec<Vector3<f64>>)> = grid
            .par_iter()
            .map(|x| {
                let near = near_centers(x);
                let grads = near
                    .iter()
                    .map(|&k| kernel_gradient(&centers[k], x, r).unwrap_or_else(Vector3::zeros))
                    .collect();
                (near, grads)
            })
            .collect();
        for (near, grads) in contributions {
            for (a, &k) in near.iter().enumerate() {
                for (b, &l) in near.iter().enumerate() {
                    let outer = grads[a] * grads[b].transpose();
                    let block = Matrix3::identity() * (reg.lambda_grad * grads[a].dot(&grads[b])) + outer * reg.lambda_div;
                    sys.add(k, l, &block);
                }
            }
        }
    }
    Ok(sys)
}

/// Conjugate gradients on the quadratic part, preconditioned with one
/// symmetric block Gauss-Seidel sweep.
fn conjugate_gradient(sys: &BlockSystem, tol: f64, max_iter: usize) -> Vec<Vector3<f64>> {
    let n = sys.rhs.len();
    let inv: Vec<Matrix3<f64>> = (0..n)
        .map(|k| {
            let d = sys.diag(k);
            d.try_inverse()
                .unwrap_or_else(|| Matrix3::from_fn(|a, b| if a == b && d[(a, a)] > 0.0 { 1.0 / d[(a, a)] } else { 0.0 }))
        })
        .collect();
    let precond = |r: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
        let mut y = vec![Vector3::zeros(); n];
        for k in 0..n {
            let mut acc = r[k];
            for (&l, b) in sys.cols[k].iter().zip(&sys.blocks[k]) {
                if l >= k {
                    break;
                }
                acc -= b * y[l];
            }
            y[k] = inv[k] * acc;
        }
        for k in (0..n).rev() {
            let mut acc = Vector3::zeros();
            for (&l, b) in sys.cols[k].iter().zip(&sys.blocks[k]).rev() {
                if l <= k {
                    break;
                }
                acc += b * y[l];
            }
            y[k] -= inv[k] * acc;
        }
        y
    };
    let dot = |a: &[Vector3<f64>], b: &[Vector3<f64>]| -> f64 { a.iter().zip(b).map(|(x, y)| x.dot(y)).sum() };

    let mut x = vec![Vector3::zeros(); n];
    let mut r = sys.rhs.clone();
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let hp = sys.apply(&p);
        let php = dot(&p, &hp);
        if php <= 0.0 {
            break;
        }
        let alpha = rz / php;
        for k in 0..n {
            x[k] += p[k] * alpha;
            r[k] -= hp[k] * alpha;
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + p[k] * beta;
        }
    }
    x
}

/// Cyclic coordinate descent with soft thresholding for the L1 term.
fn coordinate_descent(sys: &BlockSystem, lambda: f64, mut c: Vec<Vector3<f64>>) -> Vec<Vector3<f64>> {
    let n = c.len();
    let mut hc = sys.apply(&c);
    let l1 = |c: &[Vector3<f64>]| -> f64 { c.iter().map(|v| v.abs().sum()).sum() };
    let mut obj = sys.quadratic_objective(&c, &hc) + lambda * l1(&c);
    for _ in 0..MAX_SWEEPS {
        for k in 0..n {
            let d = *sys.diag(k);
            for a in 0..3 {
                let h = d[(a, a)];
                if h <= 0.0 {
                    continue;
                }
                let old = c[k][a];
                // stationarity of h x² − 2 ρ x + λ|x|
                let rho = sys.rhs[k][a] - (hc[k][a] - h * old);
                let new = soft_threshold(rho, 0.5 * lambda) / h;
                let delta = new - old;
                if delta == 0.0 {
                    continue;
                }
                c[k][a] = new;
                for (&l, b) in sys.cols[k].iter().zip(&sys.blocks[k]) {
                    // H symmetric: column k of row l equals row k of column l
                    for e in 0..3 {
                        hc[l][e] += b[(a, e)] * delta;
                    }
                }
            }
        }
        let next = sys.quadratic_objective(&c, &hc) + lambda * l1(&c);
        let decrease = obj - next;
        obj = next;
        if decrease <= OBJECTIVE_TOL * obj.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    c
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Fits coefficients for `centers` with the given support radius.
pub fn fit_rbf(
    samples: &[FieldSample],
    centers: &[Point3],
    support_radius: f64,
    reg: &RegularizationWeights,
    collocation: &[Point3],
) -> Result<RbfModel, FieldError> {
    if samples.is_empty() {
        return Err(FieldError::InvalidInput("no samples".into()));
    }
    if centers.is_empty() {
        return Err(FieldError::InvalidInput("no centers".into()));
    }
    if !(support_radius > 0.0 && support_radius.is_finite()) {
        return Err(FieldError::InvalidInput(format!("support radius {support_radius} must be positive")));
    }
    reg.validate()?;
    if samples
        .iter()
        .any(|s| !s.position.is_finite() || !s.displacement.iter().all(|v| v.is_finite()))
    {
        return Err(FieldError::InvalidInput("non-finite sample".into()));
    }
    let sys = assemble(samples, centers, support_radius, reg, collocation)?;
    let n = centers.len();
    let mut c = conjugate_gradient(&sys, 1e-13, 20 * 3 * n + 100);
    if reg.lambda_sparse > 0.0 {
        c = coordinate_descent(&sys, reg.lambda_sparse, c);
    }
    RbfModel::new(centers.to_vec(), c.iter().map(|v| [v.x, v.y, v.z]).collect(), support_radius)
}

/// Objective value of `model` on a fitting problem (for diagnostics and tests).
pub fn rbf_objective(
    model: &RbfModel,
    samples: &[FieldSample],
    reg: &RegularizationWeights,
    collocation: &[Point3],
) -> f64 {
    let data: f64 = samples
        .iter()
        .map(|s| (evaluate_field(model, &s.position) - s.displacement).norm_squared())
        .sum();
    let l1: f64 = model.coefficients.iter().flatten().map(|v| v.abs()).sum();
    let (div, grad) = collocation
        .iter()
        .map(|x| {
            let j = evaluate_jacobian(model, x);
            (j.trace().powi(2), j.norm_squared())
        })
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    data + reg.lambda_sparse * l1 + reg.lambda_div * div + reg.lambda_grad * grad
}
