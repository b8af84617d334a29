//! Cylindrical surface sampling: `z_fr` axial slices, `theta_fr` rays per
//! slice, one surface point per (slice, ray).

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::SamplingError;
use crate::model::Point3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylindricalSamplingSpec {
    pub z_fr: usize,
    pub theta_fr: usize,
    pub long_axis: [f64; 3],
    pub axis_origin: Point3,
    /// Axial extent to partition, relative to `axis_origin`. `None` uses the
    /// extent of the surface itself.
    #[serde(default)]
    pub axial_range: Option<(f64, f64)>,
}

impl Default for CylindricalSamplingSpec {
    fn default() -> Self {
        Self {
            z_fr: 40,
            theta_fr: 30,
            long_axis: [0.0, 0.0, 1.0],
            axis_origin: Point3::default(),
            axial_range: None,
        }
    }
}

impl CylindricalSamplingSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.z_fr < 2 {
            return Err(SamplingError::InvalidSpec("z_fr must be at least 2".into()));
        }
        if self.theta_fr < 3 {
            return Err(SamplingError::InvalidSpec(
                "theta_fr must be at least 3".into(),
            ));
        }
        let norm = Vector3::from(self.long_axis).norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SamplingError::InvalidSpec(format!(
                "long axis must be a unit vector (norm {norm})"
            )));
        }
        if let Some((lo, hi)) = self.axial_range {
            if !(lo < hi) {
                return Err(SamplingError::InvalidSpec("empty axial range".into()));
            }
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.z_fr * self.theta_fr
    }

    /// Orthonormal frame `(e1, e2, axis)`; angles are measured from `e1`
    /// towards `e2`.
    pub fn frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        axis_frame(&Vector3::from(self.long_axis))
    }

    fn ray_angle(&self, j: usize) -> f64 {
        TAU * j as f64 / self.theta_fr as f64
    }
}

/// Right-handed frame around `axis`, with `e1` derived from the world axis
/// least aligned with it (so the z axis yields x̂, ŷ).
pub fn axis_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let a = axis.normalize();
    let helper = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vector3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = (helper - a * helper.dot(&a)).normalize();
    let e2 = a.cross(&e1);
    (e1, e2, a)
}

/// Closed or truncated ellipsoid centered on the sampling axis origin, with
/// semi-axes `[a, b, c]` along `(e1, e2, axis)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidShell {
    pub semi_axes: [f64; 3],
    /// Axial extent of the shell; truncation at the base is expressed by an
    /// upper bound below `c`.
    pub axial_range: (f64, f64),
}

impl EllipsoidShell {
    pub fn new(semi_axes: [f64; 3], axial_range: (f64, f64)) -> Self {
        let c = semi_axes[2];
        Self {
            semi_axes,
            axial_range: (axial_range.0.max(-c), axial_range.1.min(c)),
        }
    }

    /// In-plane radius of the cross-section at axial offset `z` along angle
    /// `theta`, or `None` outside the shell.
    pub fn radius_at(&self, z: f64, theta: f64) -> Option<f64> {
        let [a, b, c] = self.semi_axes;
        if z < self.axial_range.0 || z > self.axial_range.1 {
            return None;
        }
        let s2 = 1.0 - (z / c).powi(2);
        if s2 <= 0.0 {
            return None;
        }
        let s = s2.sqrt();
        let (sin, cos) = theta.sin_cos();
        Some(1.0 / ((cos / (a * s)).powi(2) + (sin / (b * s)).powi(2)).sqrt())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Surface<'a> {
    Points(&'a [Point3]),
    Shell(&'a EllipsoidShell),
}

/// Samples `z_fr × theta_fr` points, slice-major then by ray angle.
///
/// Slice bands partition the axial extent uniformly. For point sets each ray
/// takes the in-band point closest to it (ties to the smaller index); for an
/// implicit shell the ray is intersected analytically at the band center.
pub fn sample_surface(
    surface: Surface<'_>,
    spec: &CylindricalSamplingSpec,
) -> Result<Vec<Point3>, SamplingError> {
    spec.validate()?;
    match surface {
        Surface::Points(pts) => sample_points(pts, spec),
        Surface::Shell(shell) => sample_shell(shell, spec),
    }
}

fn bands(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = (hi - lo) / n as f64;
    (0..n).map(move |k| (lo + k as f64 * h, lo + (k + 1) as f64 * h))
}

fn sample_points(
    pts: &[Point3],
    spec: &CylindricalSamplingSpec,
) -> Result<Vec<Point3>, SamplingError> {
    let (e1, e2, axis) = spec.frame();
    let origin = spec.axis_origin.to_vector();
    // (axial, in-plane offset) per point
    let local: Vec<(f64, Vector3<f64>)> = pts
        .iter()
        .map(|p| {
            let r = p.to_vector() - origin;
            let h = r.dot(&axis);
            (h, r - axis * h)
        })
        .collect();
    if local.is_empty() {
        return Err(SamplingError::EmptySlice { slice: 0 });
    }
    let (lo, hi) = spec.axial_range.unwrap_or_else(|| {
        local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (h, _)| {
            (lo.min(*h), hi.max(*h))
        })
    });

    let mut out = Vec::with_capacity(spec.point_count());
    for (k, (b_lo, b_hi)) in bands(lo, hi, spec.z_fr).enumerate() {
        let last = k + 1 == spec.z_fr;
        let members: Vec<usize> = (0..pts.len())
            .filter(|&i| {
                let h = local[i].0;
                h >= b_lo && (h < b_hi || (last && h <= b_hi))
            })
            .collect();
        if members.is_empty() {
            return Err(SamplingError::EmptySlice { slice: k });
        }
        for j in 0..spec.theta_fr {
            let (sin, cos) = spec.ray_angle(j).sin_cos();
            let ray = e1 * cos + e2 * sin;
            let mut best = (f64::INFINITY, usize::MAX);
            for &i in &members {
                let q = &local[i].1;
                let along = q.dot(&ray);
                let d = if along >= 0.0 { (q - ray * along).norm() } else { q.norm() };
                if d < best.0 {
                    best = (d, i);
                }
            }
            out.push(pts[best.1]);
        }
    }
    Ok(out)
}

fn sample_shell(
    shell: &EllipsoidShell,
    spec: &CylindricalSamplingSpec,
) -> Result<Vec<Point3>, SamplingError> {
    let (e1, e2, axis) = spec.frame();
    let origin = spec.axis_origin.to_vector();
    let (lo, hi) = spec.axial_range.unwrap_or(shell.axial_range);
    let mut out = Vec::with_capacity(spec.point_count());
    for (k, (b_lo, b_hi)) in bands(lo, hi, spec.z_fr).enumerate() {
        let z = 0.5 * (b_lo + b_hi);
        for j in 0..spec.theta_fr {
            let theta = spec.ray_angle(j);
            let r = shell
                .radius_at(z, theta)
                .ok_or(SamplingError::EmptySlice { slice: k })?;
            let (sin, cos) = theta.sin_cos();
            let v = origin + axis * z + (e1 * cos + e2 * sin) * r;
            out.push(Point3::from_vector(&v));
        }
    }
    Ok(out)
}

/// Sampling density for acquisitions with a known number of axial slices:
/// `z_fr = max(25, slices)`, `theta_fr = round(z_fr / 1.3)`.
pub fn in_vivo_spec(z_slices_available: usize) -> CylindricalSamplingSpec {
    let z_fr = z_slices_available.max(25);
    let theta_fr = (z_fr as f64 / 1.3).round() as usize;
    CylindricalSamplingSpec {
        z_fr,
        theta_fr,
        ..CylindricalSamplingSpec::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cylinder(radius: f64, height: f64, rings: usize, per_ring: usize) -> Vec<Point3> {
        let mut pts = Vec::new();
        for k in 0..rings {
            let z = height * k as f64 / (rings - 1) as f64;
            for j in 0..per_ring {
                let a = TAU * j as f64 / per_ring as f64;
                pts.push(Point3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        pts
    }

    #[test]
    fn best_combination_yields_1200_points() {
        let shell = EllipsoidShell::new([20.0, 20.0, 40.0], (-40.0, 10.0));
        let spec = CylindricalSamplingSpec::default();
        let pts = sample_surface(Surface::Shell(&shell), &spec).unwrap();
        assert_eq!(pts.len(), 1200);
    }

    #[test]
    fn cylinder_samples_sit_on_its_radius() {
        let pts = cylinder(10.0, 20.0, 9, 72);
        let spec = CylindricalSamplingSpec {
            z_fr: 2,
            theta_fr: 3,
            ..Default::default()
        };
        let s = sample_surface(Surface::Points(&pts), &spec).unwrap();
        assert_eq!(s.len(), 6);
        for p in &s {
            assert!(((p.x * p.x + p.y * p.y).sqrt() - 10.0).abs() < 1e-6);
        }
        // first slice is the lower half
        assert!(s[..3].iter().all(|p| p.z < 10.0));
        assert!(s[3..].iter().all(|p| p.z >= 10.0));
    }

    #[test]
    fn band_outside_sphere_is_empty() {
        let sphere = EllipsoidShell::new([5.0, 5.0, 5.0], (-5.0, 5.0));
        let spec = CylindricalSamplingSpec {
            z_fr: 4,
            theta_fr: 6,
            axial_range: Some((-5.0, 15.0)),
            ..Default::default()
        };
        let err = sample_surface(Surface::Shell(&sphere), &spec).unwrap_err();
        assert_eq!(err, SamplingError::EmptySlice { slice: 2 });

        let cloud: Vec<Point3> = cylinder(5.0, 10.0, 5, 12);
        let err = sample_surface(Surface::Points(&cloud), &spec).unwrap_err();
        assert!(matches!(err, SamplingError::EmptySlice { .. }));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let pts = cylinder(1.0, 1.0, 2, 8);
        for spec in [
            CylindricalSamplingSpec { z_fr: 1, ..Default::default() },
            CylindricalSamplingSpec { theta_fr: 2, ..Default::default() },
            CylindricalSamplingSpec { long_axis: [0.0, 0.0, 2.0], ..Default::default() },
        ] {
            assert!(matches!(
                sample_surface(Surface::Points(&pts), &spec),
                Err(SamplingError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn in_vivo_ratio() {
        let s = in_vivo_spec(40);
        assert_eq!((s.z_fr, s.theta_fr), (40, 31));
        let s = in_vivo_spec(10);
        assert_eq!((s.z_fr, s.theta_fr), (25, 19));
        let s = in_vivo_spec(25);
        assert_eq!((s.z_fr, s.theta_fr), (25, 19));
    }

    #[test]
    fn frame_for_z_axis_is_canonical() {
        let (e1, e2, a) = axis_frame(&Vector3::z());
        assert!((e1 - Vector3::x()).norm() < 1e-15);
        assert!((e2 - Vector3::y()).norm() < 1e-15);
        assert!((a - Vector3::z()).norm() < 1e-15);
    }

    fn rotate_z(p: &Point3, angle: f64) -> Point3 {
        let (s, c) = angle.sin_cos();
        Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
    }

    proptest! {
        #[test]
        fn output_count_is_grid_product(z_fr in 2usize..8, theta_fr in 3usize..12) {
            let pts = cylinder(4.0, 10.0, 12, 40);
            let spec = CylindricalSamplingSpec { z_fr, theta_fr, ..Default::default() };
            let s = sample_surface(Surface::Points(&pts), &spec).unwrap();
            prop_assert_eq!(s.len(), z_fr * theta_fr);
        }

        #[test]
        fn rotation_by_one_ray_step_preserves_radii(
            radii in proptest::collection::vec(3.0f64..6.0, 60),
            angles in proptest::collection::vec(0.0f64..TAU, 60),
            heights in proptest::collection::vec(0.0f64..10.0, 60),
        ) {
            let theta_fr = 5;
            let pts: Vec<Point3> = (0..60)
                .map(|i| Point3::new(radii[i] * angles[i].cos(), radii[i] * angles[i].sin(), heights[i]))
                .collect();
            let spec = CylindricalSamplingSpec {
                z_fr: 2,
                theta_fr,
                axial_range: Some((0.0, 10.0)),
                ..Default::default()
            };
            let step = TAU / theta_fr as f64;
            let rotated: Vec<Point3> = pts.iter().map(|p| rotate_z(p, step)).collect();
            let a = sample_surface(Surface::Points(&pts), &spec);
            let b = sample_surface(Surface::Points(&rotated), &spec);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for k in 0..2 {
                        let radii = |s: &[Point3]| {
                            let mut r: Vec<f64> = s[k * theta_fr..(k + 1) * theta_fr]
                                .iter()
                                .map(|p| (p.x * p.x + p.y * p.y).sqrt())
                                .collect();
                            r.sort_by(f64::total_cmp);
                            r
                        };
                        for (x, y) in radii(&a).iter().zip(radii(&b)) {
                            prop_assert!((x - y).abs() < 1e-9);
                        }
                    }
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "rotation changed slice occupancy"),
            }
        }
    }
}
