//! Green–Lagrange strain from displacement Jacobians and its projection onto
//! the radial, circumferential and longitudinal directions of a long axis.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::StrainError;
use crate::field::{evaluate_jacobian, RbfModel};
use crate::model::Point3;

/// Closer than this to the long axis the radial direction is undefined.
pub const ON_AXIS_TOL: f64 = 1e-9;

/// `E = ½(∇u + ∇uᵀ + ∇uᵀ∇u)`, exactly symmetric.
pub fn lagrangian_strain(grad_u: &Matrix3<f64>) -> Matrix3<f64> {
    let mut e = Matrix3::zeros();
    for a in 0..3 {
        for b in a..3 {
            let mut v = grad_u[(a, b)] + grad_u[(b, a)];
            for k in 0..3 {
                v += grad_u[(k, a)] * grad_u[(k, b)];
            }
            e[(a, b)] = 0.5 * v;
            e[(b, a)] = 0.5 * v;
        }
    }
    e
}

/// Long axis of the ventricle and a point on it. The axis points from apex
/// to base; `anterior` anchors the sector numbering of [`segment_of`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvAxes {
    pub long_axis: [f64; 3],
    pub apex_base_origin: Point3,
    #[serde(default = "default_anterior")]
    pub anterior: [f64; 3],
}

fn default_anterior() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl Default for LvAxes {
    fn default() -> Self {
        Self {
            long_axis: [0.0, 0.0, 1.0],
            apex_base_origin: Point3::default(),
            anterior: default_anterior(),
        }
    }
}

impl LvAxes {
    /// Normalizes `long_axis`; rejects zero or non-finite axes.
    pub fn new(long_axis: Vector3<f64>, apex_base_origin: Point3) -> Result<Self, StrainError> {
        let n = long_axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(StrainError::InvalidAxes(format!("long axis {long_axis:?} has no direction")));
        }
        let a = long_axis / n;
        Ok(Self {
            long_axis: [a.x, a.y, a.z],
            apex_base_origin,
            anterior: default_anterior(),
        })
    }

    pub fn validate(&self) -> Result<(), StrainError> {
        let n = self.axis().norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(StrainError::InvalidAxes(format!("long axis norm {n} is not 1")));
        }
        if !self.apex_base_origin.is_finite() {
            return Err(StrainError::InvalidAxes("non-finite origin".into()));
        }
        let ant = Vector3::from(self.anterior);
        if (ant - self.axis() * ant.dot(&self.axis())).norm() < ON_AXIS_TOL {
            return Err(StrainError::InvalidAxes("anterior direction is parallel to the long axis".into()));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.long_axis)
    }

    /// Axial coordinate of `p` along the long axis.
    pub fn axial(&self, p: &Point3) -> f64 {
        (p.to_vector() - self.apex_base_origin.to_vector()).dot(&self.axis())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LvDirections {
    pub radial: Vector3<f64>,
    pub circumferential: Vector3<f64>,
    pub longitudinal: Vector3<f64>,
}

pub fn lv_directions(axes: &LvAxes, position: &Point3) -> Result<LvDirections, StrainError> {
    let l = axes.axis();
    let d = position.to_vector() - axes.apex_base_origin.to_vector();
    let perp = d - l * d.dot(&l);
    let dist = perp.norm();
    if dist < ON_AXIS_TOL {
        return Err(StrainError::OnAxis { distance: dist });
    }
    let radial = perp / dist;
    Ok(LvDirections {
        radial,
        circumferential: l.cross(&radial),
        longitudinal: l,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainSample {
    pub position: Point3,
    pub e: Matrix3<f64>,
    pub radial: f64,
    pub circumferential: f64,
    pub longitudinal: f64,
}

impl StrainSample {
    pub fn from_jacobian(position: Point3, grad_u: &Matrix3<f64>, axes: &LvAxes) -> Result<Self, StrainError> {
        let dirs = lv_directions(axes, &position)?;
        let e = lagrangian_strain(grad_u);
        let proj = |d: &Vector3<f64>| d.dot(&(e * d));
        Ok(Self {
            position,
            e,
            radial: proj(&dirs.radial),
            circumferential: proj(&dirs.circumferential),
            longitudinal: proj(&dirs.longitudinal),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrainField {
    pub samples: Vec<StrainSample>,
    /// Queries that could not be projected, with their index.
    pub skipped: Vec<(usize, StrainError)>,
}

/// Strain of `model` at every query; on-axis queries are skipped and reported.
pub fn strain_field(model: &RbfModel, axes: &LvAxes, queries: &[Point3]) -> StrainField {
    let results: Vec<Result<StrainSample, StrainError>> = queries
        .par_iter()
        .map(|q| StrainSample::from_jacobian(*q, &evaluate_jacobian(model, q), axes))
        .collect();
    let mut out = StrainField::default();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => out.samples.push(s),
            Err(e) => out.skipped.push((k, e)),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Basal,
    Mid,
    Apical,
}

impl Level {
    pub fn sectors(self) -> usize {
        match self {
            Self::Basal | Self::Mid => 6,
            Self::Apical => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub level: Level,
    /// Counted from the anterior direction, positively about the long axis.
    pub sector: usize,
}

/// 6/6/4 segment of `position`: axial thirds of `axial_range` (apex at the
/// low end) and equal angular sectors starting at the anterior direction.
/// `None` outside the axial range or on the axis.
pub fn segment_of(axes: &LvAxes, axial_range: (f64, f64), position: &Point3) -> Option<Segment> {
    let (lo, hi) = axial_range;
    let h = axes.axial(position);
    if !(hi > lo) || h < lo || h > hi {
        return None;
    }
    let third = ((h - lo) / (hi - lo) * 3.0).floor().min(2.0) as usize;
    let level = [Level::Apical, Level::Mid, Level::Basal][third];

    let dirs = lv_directions(axes, position).ok()?;
    let l = axes.axis();
    let ant = Vector3::from(axes.anterior);
    let e1 = (ant - l * ant.dot(&l)).normalize();
    let e2 = l.cross(&e1);
    let angle = dirs.radial.dot(&e2).atan2(dirs.radial.dot(&e1)).rem_euclid(std::f64::consts::TAU);
    let n = level.sectors();
    let sector = ((angle / std::f64::consts::TAU * n as f64).floor() as usize).min(n - 1);
    Some(Segment { level, sector })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMean {
    pub segment: Segment,
    pub count: usize,
    pub radial: f64,
    pub circumferential: f64,
    pub longitudinal: f64,
}

/// Mean directional strain per populated segment, in segment order.
pub fn segment_means(samples: &[StrainSample], axes: &LvAxes, axial_range: (f64, f64)) -> Vec<SegmentMean> {
    let mut acc: std::collections::BTreeMap<Segment, (usize, f64, f64, f64)> = Default::default();
    for s in samples {
        if let Some(seg) = segment_of(axes, axial_range, &s.position) {
            let e = acc.entry(seg).or_default();
            e.0 += 1;
            e.1 += s.radial;
            e.2 += s.circumferential;
            e.3 += s.longitudinal;
        }
    }
    acc.into_iter()
        .map(|(segment, (n, r, c, l))| {
            let k = n as f64;
            SegmentMean {
                segment,
                count: n,
                radial: r / k,
                circumferential: c / k,
                longitudinal: l / k,
            }
        })
        .collect()
}
