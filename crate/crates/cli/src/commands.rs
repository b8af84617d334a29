use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use flowtrack::config::RunConfig;
use flowtrack::eval::{constraint_ablation, tracking_error, TrackingErrorReport};
use flowtrack::field::RbfModel;
use flowtrack::io;
use flowtrack::model::{ConstraintSet, FeatureKind, SigmaMode, SpatialGate, Trajectory, TrackingConfig};
use flowtrack::pipeline::{densify, strain_series, track, DensifyOptions};
use flowtrack::strain::LvAxes;
use flowtrack::synth::{gen_cyclic_shells, gen_toy_1d, shell_midwall_points, ShellPhantomSpec};

use crate::artifacts::*;
use crate::{
    AblateArgs, Cli, Command, DensifyArgs, EvaluateArgs, FeatureChoice, FieldFlags, Failure, GenerateArgs, InputFlags,
    PhantomKind, StrainArgs, TrackArgs, TrackingFlags,
};

const DEFAULT_PATCH_RADIUS: usize = 5;
const DEFAULT_BINS: usize = 8;
const DEFAULT_MAX_MAGNITUDE: f64 = 1.0;

/// The run configuration plus the top-level keys the config file set, so
/// values that default elsewhere (phantom metadata) are only overridden when
/// asked for.
struct Settings {
    cfg: RunConfig,
    explicit: BTreeSet<String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self {
                cfg: RunConfig::default(),
                explicit: BTreeSet::new(),
            });
        };
        require_file(path, "config file")?;
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(e.into()))?;
        let cfg = RunConfig::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let explicit = match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => BTreeSet::new(),
        };
        Ok(Self { cfg, explicit })
    }

    fn has(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    fn input(&self, flags: &InputFlags) -> Result<PathBuf, Failure> {
        flags
            .input
            .clone()
            .or_else(|| self.cfg.paths.input.clone())
            .ok_or_else(|| Failure::usage("missing --input (or paths.input in the config)"))
    }

    fn out(&self, flag: &Option<PathBuf>) -> Result<PathBuf, Failure> {
        let dir = flag
            .clone()
            .or_else(|| self.cfg.paths.output.clone())
            .ok_or_else(|| Failure::usage("missing --out (or paths.output in the config)"))?;
        fs::create_dir_all(&dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn tracking(&self, f: &TrackingFlags) -> Result<TrackingConfig, Failure> {
        let mut c = self.cfg.tracking.clone();
        if let Some(v) = f.nk {
            c.nk = v;
        }
        if let Some(v) = f.p_th {
            c.p_th = v;
        }
        if let Some(s) = &f.constraints {
            c.constraints = s.parse::<ConstraintSet>().map_err(|e| Failure::usage(format!("--constraints: {e}")))?;
        }
        let (radius, bins, max_mag) = match c.feature {
            FeatureKind::Position => (DEFAULT_PATCH_RADIUS, DEFAULT_BINS, DEFAULT_MAX_MAGNITUDE),
            FeatureKind::IntensityPatch { patch_radius } => (patch_radius, DEFAULT_BINS, DEFAULT_MAX_MAGNITUDE),
            FeatureKind::GradientHistogram { patch_radius, bins, max_magnitude } => (patch_radius, bins, max_magnitude),
        };
        let radius = f.patch_radius.unwrap_or(radius);
        let bins = f.bins.unwrap_or(bins);
        let max_mag = f.max_magnitude.unwrap_or(max_mag);
        let choice = f.feature.unwrap_or(match c.feature {
            FeatureKind::Position => FeatureChoice::Position,
            FeatureKind::IntensityPatch { .. } => FeatureChoice::Patch,
            FeatureKind::GradientHistogram { .. } => FeatureChoice::Hog,
        });
        c.feature = match choice {
            FeatureChoice::Position => FeatureKind::Position,
            FeatureChoice::Patch => FeatureKind::IntensityPatch { patch_radius: radius },
            FeatureChoice::Hog => FeatureKind::GradientHistogram {
                patch_radius: radius,
                bins,
                max_magnitude: max_mag,
            },
        };
        if f.no_gate {
            c.gate = SpatialGate::Unbounded;
        } else if let Some(mm) = f.gate_radius {
            c.gate = SpatialGate::Radius { mm };
        } else if let Some(factor) = f.gate_factor {
            c.gate = SpatialGate::Auto { factor };
        }
        if let (Some(sigma_x), Some(sigma_f)) = (f.sigma_x, f.sigma_f) {
            c.sigma_mode = SigmaMode::Fixed { sigma_x, sigma_f };
        }
        c.validate().map_err(|e| Failure::usage(format!("invalid tracking settings: {e}")))?;
        Ok(c)
    }

    fn densify_options(&self, f: &FieldFlags) -> Result<DensifyOptions, Failure> {
        let mut o = DensifyOptions {
            regularization: self.cfg.regularization,
            ..DensifyOptions::default()
        };
        if let Some(v) = f.lambda_sparse {
            o.regularization.lambda_sparse = v;
        }
        if let Some(v) = f.lambda_div {
            o.regularization.lambda_div = v;
        }
        if let Some(v) = f.lambda_grad {
            o.regularization.lambda_grad = v;
        }
        o.regularization
            .validate()
            .map_err(|e| Failure::usage(e.to_string()))?;
        if let Some(r) = f.support {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Failure::usage("--support must be positive"));
            }
            o.support_radius = Some(r);
        }
        if let Some(n) = f.grid_points {
            o.grid_points = n;
        }
        Ok(o)
    }

    /// Axes from the config when it sets them, else from the phantom metadata.
    fn axes(&self, ds: &Dataset) -> LvAxes {
        if self.has("axes") {
            self.cfg.axes
        } else {
            ds.axes().unwrap_or_default()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Compute(e.into()))?;
    }
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(&settings, &a),
        Command::Track(a) => track_cmd(&settings, &a),
        Command::Densify(a) => densify_cmd(&settings, &a),
        Command::Strain(a) => strain_cmd(&settings, &a),
        Command::Evaluate(a) => evaluate(&settings, &a),
        Command::Ablate(a) => ablate(&settings, &a),
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn generate(s: &Settings, a: &GenerateArgs) -> Result<(), Failure> {
    let out = s.out(&a.out)?;
    let seed = a.seed.unwrap_or(s.cfg.seed);
    let invalid = |e: flowtrack::Error| match e {
        flowtrack::Error::Model(m) => Failure::usage(m),
        other => other.into(),
    };
    let info = match a.phantom {
        PhantomKind::Shells => {
            let mut spec = ShellPhantomSpec {
                seed,
                ..ShellPhantomSpec::default()
            };
            if s.has("sampling") {
                spec.z_fr = s.cfg.sampling.z_fr;
                spec.theta_fr = s.cfg.sampling.theta_fr;
            }
            spec.frames = a.frames.unwrap_or(spec.frames);
            spec.z_fr = a.z_fr.unwrap_or(spec.z_fr);
            spec.theta_fr = a.theta_fr.unwrap_or(spec.theta_fr);
            spec.position_noise = a.noise.unwrap_or(spec.position_noise);
            spec.contraction_amplitude = a.contraction.unwrap_or(spec.contraction_amplitude);
            spec.twist_amplitude = a.twist.unwrap_or(spec.twist_amplitude);
            spec.image_noise = a.image_noise.unwrap_or(spec.image_noise);
            spec.voxel_spacing = a.voxel_spacing.unwrap_or(spec.voxel_spacing);
            spec.texture_components = a.texture_components.unwrap_or(spec.texture_components);
            spec.volumes = !a.no_volumes;
            let ph = gen_cyclic_shells(&spec).map_err(invalid)?;
            io::write_points_csv(&out.join(POINTS), &ph.sequence)?;
            io::write_truth_csv(&out.join(TRUTH), &ph.truth)?;
            for (t, v) in ph.volumes.iter().enumerate() {
                io::write_volume(&out.join(io::volume_file_name(t)), v)?;
            }
            PhantomInfo {
                phantom: "shells".into(),
                frames: spec.frames,
                es_frame: ph.truth.es_frame() + 1,
                periodic: true,
                axes: spec.axes(),
                volumes: ph.volumes.len(),
                shells: Some(spec),
                toy: None,
            }
        }
        PhantomKind::Toy1d => {
            let frames = a.frames.unwrap_or(10);
            let noise = a.noise.unwrap_or(0.0);
            let (seq, truth) =
                gen_toy_1d(a.points, frames, noise, a.crossing, seed).map_err(Failure::usage)?;
            io::write_points_csv(&out.join(POINTS), &seq)?;
            io::write_truth_csv(&out.join(TRUTH), &truth)?;
            PhantomInfo {
                phantom: "toy1d".into(),
                frames,
                es_frame: truth.es_frame() + 1,
                periodic: false,
                axes: LvAxes::default(),
                shells: None,
                toy: Some(ToyInfo {
                    points: a.points,
                    noise,
                    crossing: a.crossing,
                    seed,
                }),
                volumes: 0,
            }
        }
    };
    io::write_json(&out.join(PHANTOM), &info)?;
    println!(
        "wrote {} phantom: {} frames, ES frame {}, {} volumes -> {}",
        info.phantom,
        info.frames,
        info.es_frame,
        info.volumes,
        out.display()
    );
    Ok(())
}

fn volumes_for(ds: &Dataset, config: &TrackingConfig) -> Result<Option<Vec<flowtrack::features::VolumeImage>>, Failure> {
    if matches!(config.feature, FeatureKind::Position) {
        return Ok(None);
    }
    match ds.volumes()? {
        Some(v) => Ok(Some(v)),
        None => Err(Failure::usage(format!(
            "the {:?} feature needs one volume per frame in {}; use --feature position for point-only data",
            config.feature,
            ds.dir.display()
        ))),
    }
}

fn print_report(label: &str, r: &TrackingErrorReport) {
    println!(
        "{label}: MTE {:.4} (IQR {:.4}), ES {:.4} (IQR {:.4}), ED {:.4} (IQR {:.4}) over {} trajectories",
        r.overall_median, r.overall_iqr, r.es_median, r.es_iqr, r.ed_median, r.ed_iqr, r.trajectories
    );
}

fn track_cmd(s: &Settings, a: &TrackArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&s.input(&a.io)?)?;
    let out = s.out(&a.io.out)?;
    let config = s.tracking(&a.tracking)?;
    let truth = ds.truth(a.truth.as_deref())?;
    let volumes = volumes_for(&ds, &config)?;
    let result = track(&ds.sequence, volumes.as_deref(), &config)?;
    let ex = &result.extraction;
    if ex.trajectories.is_empty() {
        warn(format!("no trajectories survived (p_th = {}); writing an empty list", config.p_th));
    }
    if !ex.shared_nodes.is_empty() {
        warn(format!("{} nodes are shared between trajectories", ex.shared_nodes.len()));
    }
    if ex.incomplete > 0 {
        warn(format!("{} walks ended before the last frame and were dropped", ex.incomplete));
    }
    io::write_json(&out.join(TRAJECTORIES), &io::TrajectoryFile::new(&result.solution, ex))?;
    println!(
        "{} trajectories under {{{}}}, objective {:.6}, {} edges",
        ex.trajectories.len(),
        config.constraints,
        result.solution.objective,
        result.network.num_edges()
    );
    if let Some(gt) = truth {
        if ex.trajectories.is_empty() {
            warn("no trajectories to evaluate; metrics.json not written");
        } else {
            let report = tracking_error(&ex.trajectories, &ds.sequence, &gt).map_err(|e| Failure::Compute(e.into()))?;
            io::write_json(&out.join(METRICS), &report)?;
            print_report("tracking error", &report);
        }
    }
    Ok(())
}

fn load_trajectories(ds: &Dataset, flag: &Option<PathBuf>) -> Result<Vec<Trajectory>, Failure> {
    let path = flag.clone().unwrap_or_else(|| ds.dir.join(TRAJECTORIES));
    require_file(&path, "trajectory file")?;
    let file: io::TrajectoryFile = io::read_json(&path)?;
    Ok(file.trajectories(&ds.sequence)?)
}

fn fit(ds: &Dataset, trajectories: &[Trajectory], options: &DensifyOptions) -> Result<Vec<RbfModel>, Failure> {
    if trajectories.is_empty() {
        return Err(Failure::Compute(anyhow::anyhow!("the trajectory file holds no trajectories")));
    }
    Ok(densify(&ds.sequence, trajectories, options)?)
}

fn densify_cmd(s: &Settings, a: &DensifyArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&s.input(&a.io)?)?;
    let trajectories = load_trajectories(&ds, &a.trajectories)?;
    let out = s.out(&a.io.out)?;
    let options = s.densify_options(&a.field)?;
    let models = fit(&ds, &trajectories, &options)?;
    io::write_json(&out.join(FIELDS), &models)?;
    let active: usize = models.iter().map(|m| m.active_centers(1e-12)).sum();
    println!(
        "{} fields, {} centers each, support {:.3} mm, {} active coefficients in total",
        models.len(),
        trajectories.len(),
        models[0].support_radius,
        active
    );
    Ok(())
}

fn strain_cmd(s: &Settings, a: &StrainArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&s.input(&a.io)?)?;
    let out = s.out(&a.io.out)?;
    let models: Vec<RbfModel> = match &a.fields {
        Some(p) => {
            require_file(p, "field file")?;
            let models: Vec<RbfModel> = io::read_json(p)?;
            if models.len() != ds.sequence.num_frames() {
                return Err(Failure::usage(format!(
                    "{} holds {} fields for {} frames",
                    p.display(),
                    models.len(),
                    ds.sequence.num_frames()
                )));
            }
            models
        }
        None => {
            let trajectories = load_trajectories(&ds, &a.trajectories)?;
            fit(&ds, &trajectories, &s.densify_options(&a.field)?)?
        }
    };
    let queries = match (&a.queries, ds.info.as_ref().and_then(|i| i.shells.as_ref())) {
        (Some(p), _) => read_queries(p)?,
        (None, Some(spec)) => {
            let (z, th) = if s.has("sampling") {
                (s.cfg.sampling.z_fr, s.cfg.sampling.theta_fr)
            } else {
                (spec.z_fr, spec.theta_fr)
            };
            shell_midwall_points(spec, z, th)
        }
        (None, None) => models[0].centers.clone(),
    };
    let reach = 0.5 * models[0].support_radius;
    let sparse = queries
        .iter()
        .filter(|q| models[0].centers.iter().all(|c| c.distance(q) > reach))
        .count();
    if sparse > 0 {
        warn(format!(
            "{sparse} of {} query points are more than half a support radius ({reach:.2} mm) from every center; \
             strain there is unreliable, consider a larger --support",
            queries.len()
        ));
    }
    let fields = strain_series(&models, &s.axes(&ds), &queries);
    let skipped = fields[0].skipped.len();
    if skipped > 0 {
        warn(format!("{skipped} query points lie on the long axis and were skipped"));
    }
    fs::write(out.join(STRAIN), io::strain_to_csv(&fields)).map_err(|e| Failure::Usage(e.into()))?;
    let es = ds.es_frame().min(fields.len() - 1);
    let mean = |f: fn(&flowtrack::strain::StrainSample) -> f64| {
        let v = &fields[es].samples;
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(f).sum::<f64>() / v.len() as f64
        }
    };
    println!(
        "strain at {} points over {} frames; mean at ES (frame {}): Err {:.4}, Ecc {:.4}, Ell {:.4}",
        fields[0].samples.len(),
        fields.len(),
        es + 1,
        mean(|x| x.radial),
        mean(|x| x.circumferential),
        mean(|x| x.longitudinal)
    );
    Ok(())
}

fn evaluate(s: &Settings, a: &EvaluateArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&s.input(&a.io)?)?;
    let trajectories = load_trajectories(&ds, &a.trajectories)?;
    let truth = ds
        .truth(a.truth.as_deref())?
        .ok_or_else(|| Failure::usage("no ground truth: pass --truth or put truth.csv in the input directory"))?;
    let report = tracking_error(&trajectories, &ds.sequence, &truth).map_err(|e| Failure::Compute(e.into()))?;
    if a.io.out.is_some() || s.cfg.paths.output.is_some() {
        io::write_json(&s.out(&a.io.out)?.join(METRICS), &report)?;
    }
    print_report("tracking error", &report);
    Ok(())
}

fn ablate(s: &Settings, a: &AblateArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&s.input(&a.io)?)?;
    let out = s.out(&a.io.out)?;
    let config = s.tracking(&a.tracking)?;
    let truth = ds
        .truth(a.truth.as_deref())?
        .ok_or_else(|| Failure::usage("no ground truth: pass --truth or put truth.csv in the input directory"))?;
    let volumes = volumes_for(&ds, &config)?;
    let rows = constraint_ablation(&ds.sequence, &truth, &config, volumes.as_deref())?;
    fs::write(out.join(ABLATION_CSV), io::ablation_to_csv(&rows)).map_err(|e| Failure::Usage(e.into()))?;
    io::write_json(&out.join(ABLATION_JSON), &rows)?;
    for r in &rows {
        print_report(&format!("{{{}}}", r.constraints), &r.report);
    }
    Ok(())
}
