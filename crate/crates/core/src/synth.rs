//! Synthetic sequences with known correspondences: a 1D+t toy and a pair of
//! contracting, twisting ellipsoidal shells with an advected texture.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError};
use crate::features::VolumeImage;
use crate::model::{FrameSequence, Point3};
use crate::sampling::{sample_surface, CylindricalSamplingSpec, EllipsoidShell, Surface};
use crate::strain::LvAxes;

/// True positions of every trajectory in every frame, indexed `[k][t]`.
/// Trajectory `k` starts at point `k` of frame 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    positions: Vec<Vec<Point3>>,
    es_frame: usize,
}

impl GroundTruth {
    pub fn new(positions: Vec<Vec<Point3>>, es_frame: usize) -> Result<Self, ModelError> {
        let frames = positions.first().map_or(0, |p| p.len());
        if frames == 0 || positions.iter().any(|p| p.len() != frames) {
            return Err(ModelError::InvalidConfig("ground truth needs the same non-zero frame count for every trajectory".into()));
        }
        if es_frame >= frames {
            return Err(ModelError::InvalidConfig(format!("ES frame {} beyond {frames} frames", es_frame + 1)));
        }
        Ok(Self { positions, es_frame })
    }

    pub fn positions(&self) -> &[Vec<Point3>] {
        &self.positions
    }

    pub fn num_trajectories(&self) -> usize {
        self.positions.len()
    }

    pub fn num_frames(&self) -> usize {
        self.positions[0].len()
    }

    /// 0-based end-systolic frame.
    pub fn es_frame(&self) -> usize {
        self.es_frame
    }

    pub fn position(&self, k: usize, t: usize) -> Point3 {
        self.positions[k][t]
    }

    pub fn starts(&self) -> impl Iterator<Item = Point3> + '_ {
        self.positions.iter().map(|p| p[0])
    }
}

/// Random stream `n` of `seed`, so independent parts of a generator do not
/// shift each other's draws.
fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

/// Builds the observed sequence: frame 1 exact, later frames noisy and
/// shuffled.
fn observe(truth: &[Vec<Point3>], noise: f64, seed: u64, periodic: bool) -> FrameSequence {
    let frames = truth[0].len();
    let mut noise_rng = stream(seed, 1);
    let mut shuffle_rng = stream(seed, 2);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite stddev");
    let mut out = Vec::with_capacity(frames);
    out.push(truth.iter().map(|p| p[0]).collect());
    for t in 1..frames {
        let mut pts: Vec<Point3> = truth
            .iter()
            .map(|p| {
                let q = p[t];
                if noise > 0.0 {
                    Point3::new(
                        q.x + normal.sample(&mut noise_rng),
                        q.y + normal.sample(&mut noise_rng),
                        q.z + normal.sample(&mut noise_rng),
                    )
                } else {
                    q
                }
            })
            .collect();
        pts.shuffle(&mut shuffle_rng);
        out.push(pts);
    }
    FrameSequence::new(out, periodic)
}

/// Points stacked along x (spacing 2) that stay put, except that with
/// `crossing` the first two drift past each other. Frames after the first
/// carry Gaussian noise of stddev `noise` on x and are shuffled.
pub fn gen_toy_1d(
    points_per_frame: usize,
    frames: usize,
    noise: f64,
    crossing: bool,
    seed: u64,
) -> Result<(FrameSequence, GroundTruth), ModelError> {
    if points_per_frame < 2 || frames < 3 {
        return Err(ModelError::InvalidConfig("toy needs at least 2 points and 3 frames".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("noise {noise} must be non-negative")));
    }
    let spacing = 2.0;
    let span = (frames - 1) as f64;
    let truth: Vec<Vec<Point3>> = (0..points_per_frame)
        .map(|k| {
            (0..frames)
                .map(|t| {
                    let u = t as f64 / span;
                    let x = match (crossing, k) {
                        (true, 0) => 1.2 * spacing * u,
                        (true, 1) => spacing * (1.0 - 1.2 * u),
                        _ => k as f64 * spacing,
                    };
                    Point3::new(x, 0.0, 0.0)
                })
                .collect()
        })
        .collect();
    let mut noise_rng = stream(seed, 1);
    let mut shuffle_rng = stream(seed, 2);
    let normal = Normal::new(0.0, noise).expect("finite stddev");
    let mut seq = vec![truth.iter().map(|p| p[0]).collect::<Vec<_>>()];
    for t in 1..frames {
        let mut pts: Vec<Point3> = truth
            .iter()
            .map(|p| {
                let dx = if noise > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                Point3::new(p[t].x + dx, 0.0, 0.0)
            })
            .collect();
        pts.shuffle(&mut shuffle_rng);
        seq.push(pts);
    }
    let gt = GroundTruth::new(truth, frames / 2)?;
    Ok((FrameSequence::new(seq, false), gt))
}

/// Periodic contraction and twist about a vertical axis through `center`.
///
/// At 0-based frame `s` of `frames`, in-plane offsets from the axis are
/// rotated by `θ(s)·z/axial_scale` and scaled by `ρ(s)`, with
/// `ρ(s) = 1 − A sin²(πs/T)` and `θ(s) = B sin(2πs/T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellMotion {
    pub center: Point3,
    pub axial_scale: f64,
    pub frames: usize,
    pub contraction_amplitude: f64,
    pub twist_amplitude: f64,
}

impl ShellMotion {
    pub fn radius_scale(&self, s: usize) -> f64 {
        let phase = PI * s as f64 / self.frames as f64;
        1.0 - self.contraction_amplitude * phase.sin().powi(2)
    }

    pub fn twist_angle(&self, s: usize) -> f64 {
        self.twist_amplitude * (TAU * s as f64 / self.frames as f64).sin()
    }

    /// Position at frame `s` of the material point at `p` in frame 1.
    pub fn apply(&self, p: &Point3, s: usize) -> Point3 {
        let d = p.to_vector() - self.center.to_vector();
        let a = self.twist_angle(s) * d.z / self.axial_scale;
        let rho = self.radius_scale(s);
        let (sin, cos) = a.sin_cos();
        let v = Vector3::new(rho * (cos * d.x - sin * d.y), rho * (sin * d.x + cos * d.y), d.z);
        Point3::from_vector(&(self.center.to_vector() + v))
    }

    /// Frame-1 position of the material point found at `p` in frame `s`.
    pub fn invert(&self, p: &Point3, s: usize) -> Point3 {
        let d = p.to_vector() - self.center.to_vector();
        let a = -self.twist_angle(s) * d.z / self.axial_scale;
        let rho = self.radius_scale(s);
        let (sin, cos) = a.sin_cos();
        let v = Vector3::new((cos * d.x - sin * d.y) / rho, (sin * d.x + cos * d.y) / rho, d.z);
        Point3::from_vector(&(self.center.to_vector() + v))
    }
}

/// Band-limited random field: a sum of random-phase plane cosines.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    waves: Vec<(Vector3<f64>, f64)>,
    amplitude: f64,
}

impl Texture {
    /// Wavelengths drawn uniformly from `wavelengths` (mm), directions
    /// uniformly on the sphere.
    pub fn random(components: usize, wavelengths: (f64, f64), rng: &mut impl Rng) -> Self {
        let waves = (0..components)
            .map(|_| {
                let zc: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..TAU);
                let r = (1.0 - zc * zc).sqrt();
                let dir = Vector3::new(r * phi.cos(), r * phi.sin(), zc);
                let lambda = rng.random_range(wavelengths.0..=wavelengths.1);
                (dir * (TAU / lambda), rng.random_range(0.0..TAU))
            })
            .collect();
        Self {
            waves,
            amplitude: 1.0 / (components.max(1) as f64).sqrt(),
        }
    }

    pub fn eval(&self, p: &Point3) -> f64 {
        let x = p.to_vector();
        self.amplitude * self.waves.iter().map(|(k, ph)| (k.dot(&x) + ph).cos()).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellPhantomSpec {
    pub z_fr: usize,
    pub theta_fr: usize,
    pub frames: usize,
    pub contraction_amplitude: f64,
    pub twist_amplitude: f64,
    pub seed: u64,
    /// Gaussian stddev (mm) added to every coordinate after frame 1.
    pub position_noise: f64,
    /// Gaussian stddev added to every voxel.
    pub image_noise: f64,
    pub inner_semi_axes: [f64; 3],
    pub outer_semi_axes: [f64; 3],
    /// Both shells are cut at this axial offset above their center (base).
    pub base_cut: f64,
    pub voxel_spacing: f64,
    /// Free space around the shells inside the volume (mm).
    pub margin: f64,
    pub texture_components: usize,
    pub texture_wavelengths: (f64, f64),
    pub volumes: bool,
}

impl Default for ShellPhantomSpec {
    fn default() -> Self {
        Self {
            z_fr: 20,
            theta_fr: 15,
            frames: 16,
            contraction_amplitude: 0.15,
            twist_amplitude: 0.2,
            seed: 7,
            position_noise: 0.3,
            image_noise: 0.0,
            inner_semi_axes: [20.0, 20.0, 36.0],
            outer_semi_axes: [28.0, 28.0, 44.0],
            base_cut: 12.0,
            voxel_spacing: 1.0,
            margin: 10.0,
            texture_components: 50,
            texture_wavelengths: (6.0, 16.0),
            volumes: true,
        }
    }
}

impl ShellPhantomSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.frames < 4 {
            return bad("shell phantom needs at least 4 frames");
        }
        for a in [self.contraction_amplitude, self.twist_amplitude] {
            if !(0.0..0.5).contains(&a) {
                return bad("motion amplitudes must lie in [0, 0.5)");
            }
        }
        if !(self.position_noise >= 0.0 && self.image_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        let inner_inside = (0..3).all(|a| self.inner_semi_axes[a] > 0.0 && self.inner_semi_axes[a] < self.outer_semi_axes[a]);
        if !inner_inside {
            return bad("inner shell must lie strictly inside the outer shell");
        }
        if !(self.voxel_spacing > 0.0 && self.margin >= 0.0) {
            return bad("voxel spacing must be positive and margin non-negative");
        }
        if !(self.texture_wavelengths.0 > 0.0 && self.texture_wavelengths.0 <= self.texture_wavelengths.1) {
            return bad("texture wavelengths must be a positive interval");
        }
        Ok(())
    }

    /// Center of both shells, placed so the volume starts at the origin.
    pub fn center(&self) -> Point3 {
        let [a, b, c] = self.outer_semi_axes;
        Point3::new(a + self.margin, b + self.margin, c + self.margin)
    }

    pub fn motion(&self) -> ShellMotion {
        ShellMotion {
            center: self.center(),
            axial_scale: self.outer_semi_axes[2],
            frames: self.frames,
            contraction_amplitude: self.contraction_amplitude,
            twist_amplitude: self.twist_amplitude,
        }
    }

    pub fn axes(&self) -> LvAxes {
        LvAxes {
            apex_base_origin: self.center(),
            ..LvAxes::default()
        }
    }

    pub fn shells(&self) -> [EllipsoidShell; 2] {
        let cut = |c: f64| (-c, self.base_cut.min(c));
        [
            EllipsoidShell::new(self.inner_semi_axes, cut(self.inner_semi_axes[2])),
            EllipsoidShell::new(self.outer_semi_axes, cut(self.outer_semi_axes[2])),
        ]
    }

    pub fn volume_dims(&self) -> [usize; 3] {
        let [a, b, c] = self.outer_semi_axes;
        let top = c + self.base_cut.min(c);
        let ext = [2.0 * a, 2.0 * b, top];
        let mut d = [0; 3];
        for k in 0..3 {
            d[k] = ((ext[k] + 2.0 * self.margin) / self.voxel_spacing).ceil() as usize + 1;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct ShellPhantom {
    pub spec: ShellPhantomSpec,
    pub sequence: FrameSequence,
    pub truth: GroundTruth,
    /// One volume per frame (empty when the spec disables volumes).
    pub volumes: Vec<VolumeImage>,
}

/// Two truncated concentric ellipsoidal shells sampled cylindrically in
/// frame 1 and carried through one period of [`ShellMotion`].
pub fn gen_cyclic_shells(spec: &ShellPhantomSpec) -> Result<ShellPhantom, Error> {
    spec.validate()?;
    let center = spec.center();
    let sampling = CylindricalSamplingSpec {
        z_fr: spec.z_fr,
        theta_fr: spec.theta_fr,
        axis_origin: center,
        ..CylindricalSamplingSpec::default()
    };
    let mut first = Vec::new();
    for shell in &spec.shells() {
        first.extend(sample_surface(Surface::Shell(shell), &sampling)?);
    }
    let motion = spec.motion();
    let truth_pos: Vec<Vec<Point3>> = first
        .iter()
        .map(|p| (0..spec.frames).map(|s| motion.apply(p, s)).collect())
        .collect();

    let axes = spec.axes();
    let mean_radius = |s: usize| -> f64 {
        truth_pos
            .iter()
            .map(|p| {
                let d = p[s].to_vector() - axes.apex_base_origin.to_vector();
                (d - axes.axis() * d.dot(&axes.axis())).norm()
            })
            .sum::<f64>()
    };
    let es_frame = (0..spec.frames)
        .map(|s| (mean_radius(s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, s)| s)
        .unwrap_or(0);

    let sequence = observe(&truth_pos, spec.position_noise, spec.seed, true);
    let truth = GroundTruth::new(truth_pos, es_frame)?;

    let volumes = if spec.volumes {
        let texture = Texture::random(spec.texture_components, spec.texture_wavelengths, &mut stream(spec.seed, 3));
        let dims = spec.volume_dims();
        let h = spec.voxel_spacing;
        let normal = Normal::new(0.0, spec.image_noise).expect("finite stddev");
        let mut out = Vec::with_capacity(spec.frames);
        for s in 0..spec.frames {
            let clean = VolumeImage::from_fn(dims, [h; 3], |p| texture.eval(&motion.invert(&p, s)))?;
            if spec.image_noise > 0.0 {
                let mut rng = stream(spec.seed, 100 + s as u64);
                let noisy: Vec<f32> = clean
                    .voxels()
                    .iter()
                    .map(|v| v + normal.sample(&mut rng) as f32)
                    .collect();
                out.push(VolumeImage::new(dims, [h; 3], noisy)?);
            } else {
                out.push(clean);
            }
        }
        out
    } else {
        Vec::new()
    };

    Ok(ShellPhantom {
        spec: spec.clone(),
        sequence,
        truth,
        volumes,
    })
}

/// Points halfway between the two shells at `z_fr × theta_fr` cylindrical
/// positions of frame 1 (the myocardial interior of the phantom).
pub fn shell_midwall_points(spec: &ShellPhantomSpec, z_fr: usize, theta_fr: usize) -> Vec<Point3> {
    let [inner, outer] = spec.shells();
    let center = spec.center().to_vector();
    let (lo, hi) = inner.axial_range;
    let mut out = Vec::new();
    for k in 0..z_fr {
        let z = lo + (k as f64 + 0.5) * (hi - lo) / z_fr as f64;
        for j in 0..theta_fr {
            let th = TAU * j as f64 / theta_fr as f64;
            if let (Some(ri), Some(ro)) = (inner.radius_at(z, th), outer.radius_at(z, th)) {
                let r = 0.5 * (ri + ro);
                out.push(Point3::from_vector(&(center + Vector3::new(r * th.cos(), r * th.sin(), z))));
            }
        }
    }
    out
}

/// Applies the motion to noise-free frame-1 points for every frame in
/// parallel; handy for oracles.
pub fn advect_all(motion: &ShellMotion, points: &[Point3]) -> Vec<Vec<Point3>> {
    (0..motion.frames)
        .into_par_iter()
        .map(|s| points.iter().map(|p| motion.apply(p, s)).collect())
        .collect()
}
