//! Pluggable feature providers `F(x)` for candidate selection and edge
//! weighting.

use rayon::prelude::*;

use crate::error::FeatureError;
use crate::model::{FeatureKind, FrameSequence, Point3};

/// Scalar volume on a regular grid whose voxel `(i, j, k)` is centered at
/// `(i·sx, j·sy, k·sz)` mm. Voxels are stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeImage {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<f32>,
}

impl VolumeImage {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f32>) -> Result<Self, FeatureError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(FeatureError::InvalidParameters("volume dims must be >= 1".into()));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(FeatureError::InvalidParameters("volume spacing must be > 0".into()));
        }
        if voxels.len() != dims[0] * dims[1] * dims[2] {
            return Err(FeatureError::InvalidParameters(format!(
                "expected {} voxels, got {}",
                dims[0] * dims[1] * dims[2],
                voxels.len()
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidParameters("non-finite voxel".into()));
        }
        Ok(Self { dims, spacing, voxels })
    }

    /// Fills the volume by evaluating `f` at every voxel center.
    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(Point3) -> f64 + Sync) -> Result<Self, FeatureError> {
        let plane = dims[0] * dims[1];
        let voxels: Vec<f32> = (0..dims[2])
            .into_par_iter()
            .flat_map_iter(|k| {
                let f = &f;
                (0..plane).map(move |n| {
                    let (i, j) = (n % dims[0], n / dims[0]);
                    let p = Point3::new(i as f64 * spacing[0], j as f64 * spacing[1], k as f64 * spacing[2]);
                    f(p) as f32
                })
            })
            .collect();
        Self::new(dims, spacing, voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.voxels[i + self.dims[0] * (j + self.dims[1] * k)] as f64
    }

    /// Voxel value with edge replication outside the grid.
    pub fn get_clamped(&self, idx: [isize; 3]) -> f64 {
        let c = self.clamp(idx);
        self.get(c[0], c[1], c[2])
    }

    fn clamp(&self, idx: [isize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = idx[a].clamp(0, self.dims[a] as isize - 1) as usize;
        }
        out
    }

    /// Nearest voxel to a world position (may lie outside the grid).
    pub fn nearest_voxel(&self, p: &Point3) -> [isize; 3] {
        let c = [p.x, p.y, p.z];
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = (c[a] / self.spacing[a]).round() as isize;
        }
        out
    }

    /// Spacing-aware gradient; central differences inside, one-sided on the
    /// grid faces.
    pub fn gradient(&self, v: [usize; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let mut lo = v;
            let mut hi = v;
            let span = if v[a] == 0 {
                hi[a] = 1;
                1.0
            } else if v[a] == n - 1 {
                lo[a] = n - 2;
                1.0
            } else {
                lo[a] -= 1;
                hi[a] += 1;
                2.0
            };
            g[a] = (self.get(hi[0], hi[1], hi[2]) - self.get(lo[0], lo[1], lo[2])) / (span * self.spacing[a]);
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::InvalidParameters("feature vector must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidParameters("non-finite feature value".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Contract for a feature provider. `distance` must be symmetric,
/// non-negative and zero on identical inputs.
pub trait FeatureProvider: Send + Sync {
    fn extract(&self, point: &Point3, image: Option<&VolumeImage>) -> Result<FeatureVector, FeatureError>;

    fn distance(&self, a: &FeatureVector, b: &FeatureVector) -> f64;

    fn needs_image(&self) -> bool {
        false
    }
}

/// Constant feature; edge weights reduce to their spatial factor.
#[derive(Clone, Copy, Debug, Default)]
pub struct PositionFeature;

impl FeatureProvider for PositionFeature {
    fn extract(&self, _point: &Point3, _image: Option<&VolumeImage>) -> Result<FeatureVector, FeatureError> {
        Ok(FeatureVector(vec![0.0]))
    }

    fn distance(&self, a: &FeatureVector, b: &FeatureVector) -> f64 {
        euclidean(a.values(), b.values())
    }
}

pub fn position_feature(_point: &Point3) -> FeatureVector {
    FeatureVector(vec![0.0])
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn patch_offsets(r: isize) -> impl Iterator<Item = [isize; 3]> {
    (-r..=r).flat_map(move |dz| (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| [dx, dy, dz])))
}

/// Raw intensity patch compared by `1 − NCC`.
#[derive(Clone, Copy, Debug)]
pub struct IntensityPatchFeature {
    pub patch_radius: usize,
}

impl Default for IntensityPatchFeature {
    fn default() -> Self {
        Self { patch_radius: 5 }
    }
}

impl FeatureProvider for IntensityPatchFeature {
    fn extract(&self, point: &Point3, image: Option<&VolumeImage>) -> Result<FeatureVector, FeatureError> {
        let image = image.ok_or(FeatureError::ImageRequired)?;
        intensity_patch(point, image, self.patch_radius)
    }

    fn distance(&self, a: &FeatureVector, b: &FeatureVector) -> f64 {
        ncc_distance(a.values(), b.values())
    }

    fn needs_image(&self) -> bool {
        true
    }
}

/// Cube of side `2r + 1` around the nearest voxel, x fastest, edge-replicated.
pub fn intensity_patch(point: &Point3, image: &VolumeImage, patch_radius: usize) -> Result<FeatureVector, FeatureError> {
    let c = image.nearest_voxel(point);
    let values = patch_offsets(patch_radius as isize)
        .map(|o| image.get_clamped([c[0] + o[0], c[1] + o[1], c[2] + o[2]]))
        .collect();
    Ok(FeatureVector(values))
}

/// `1 − NCC(a, b)` in `[0, 2]`. A zero-variance input has NCC 0.
pub fn ncc_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = a.len().min(b.len());
    if n == 0 {
        return 1.0;
    }
    let mean = |v: &[f64]| v[..n].iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    let (mut sa, mut sb) = (0.0f64, 0.0f64);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        dot += x * y;
        na += x * x;
        nb += y * y;
        sa = sa.max(a[i].abs());
        sb = sb.max(b[i].abs());
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    let flat = |norm: f64, scale: f64| norm <= 1e-12 * (scale * (n as f64).sqrt()).max(f64::MIN_POSITIVE);
    if flat(na, sa) || flat(nb, sb) {
        return 1.0;
    }
    let ncc = (dot / (na * nb)).clamp(-1.0, 1.0);
    1.0 - ncc
}

/// L1-normalized histogram of gradient magnitudes over a patch, bins spread
/// uniformly over `[0, max_magnitude]` (larger magnitudes land in the last
/// bin). Compared by Euclidean distance.
#[derive(Clone, Copy, Debug)]
pub struct GradientHistogramFeature {
    pub patch_radius: usize,
    pub bins: usize,
    pub max_magnitude: f64,
}

impl FeatureProvider for GradientHistogramFeature {
    fn extract(&self, point: &Point3, image: Option<&VolumeImage>) -> Result<FeatureVector, FeatureError> {
        let image = image.ok_or(FeatureError::ImageRequired)?;
        gradient_histogram(point, image, self.patch_radius, self.bins, self.max_magnitude)
    }

    fn distance(&self, a: &FeatureVector, b: &FeatureVector) -> f64 {
        euclidean(a.values(), b.values())
    }

    fn needs_image(&self) -> bool {
        true
    }
}

pub fn gradient_histogram(
    point: &Point3,
    image: &VolumeImage,
    patch_radius: usize,
    bins: usize,
    max_magnitude: f64,
) -> Result<FeatureVector, FeatureError> {
    if bins < 2 {
        return Err(FeatureError::InvalidParameters("need at least 2 bins".into()));
    }
    if !(max_magnitude > 0.0) {
        return Err(FeatureError::InvalidParameters("max_magnitude must be > 0".into()));
    }
    let c = image.nearest_voxel(point);
    let mut hist = vec![0.0; bins];
    let mut count = 0usize;
    for o in patch_offsets(patch_radius as isize) {
        let v = image.clamp([c[0] + o[0], c[1] + o[1], c[2] + o[2]]);
        let g = image.gradient(v);
        let m = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let b = ((m / max_magnitude * bins as f64).floor() as usize).min(bins - 1);
        hist[b] += 1.0;
        count += 1;
    }
    for h in &mut hist {
        *h /= count as f64;
    }
    Ok(FeatureVector(hist))
}

pub fn provider_for(kind: &FeatureKind) -> Box<dyn FeatureProvider> {
    match *kind {
        FeatureKind::Position => Box::new(PositionFeature),
        FeatureKind::IntensityPatch { patch_radius } => Box::new(IntensityPatchFeature { patch_radius }),
        FeatureKind::GradientHistogram { patch_radius, bins, max_magnitude } => Box::new(GradientHistogramFeature {
            patch_radius,
            bins,
            max_magnitude,
        }),
    }
}

/// Features for every point, frame by frame. `images`, when given, holds one
/// volume per frame.
pub fn extract_features(
    seq: &FrameSequence,
    provider: &dyn FeatureProvider,
    images: Option<&[VolumeImage]>,
) -> Result<Vec<Vec<FeatureVector>>, FeatureError> {
    if let Some(imgs) = images {
        if imgs.len() != seq.num_frames() {
            return Err(FeatureError::ImageCountMismatch(imgs.len(), seq.num_frames()));
        }
    } else if provider.needs_image() {
        return Err(FeatureError::ImageRequired);
    }
    (0..seq.num_frames())
        .into_par_iter()
        .map(|t| {
            let img = images.map(|v| &v[t]);
            seq.frame(t).iter().map(|p| provider.extract(p, img)).collect()
        })
        .collect()
}
