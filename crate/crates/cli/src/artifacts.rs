//! Layout of a data directory and the small metadata file next to the points.

use std::path::{Path, PathBuf};

use flowtrack::features::VolumeImage;
use flowtrack::io;
use flowtrack::model::{FrameSequence, Point3};
use flowtrack::strain::LvAxes;
use flowtrack::synth::{GroundTruth, ShellPhantomSpec};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const POINTS: &str = "points.csv";
pub const TRUTH: &str = "truth.csv";
pub const PHANTOM: &str = "phantom.json";
pub const TRAJECTORIES: &str = "trajectories.json";
pub const METRICS: &str = "metrics.json";
pub const FIELDS: &str = "fields.json";
pub const STRAIN: &str = "strain.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyInfo {
    pub points: usize,
    pub noise: f64,
    pub crossing: bool,
    pub seed: u64,
}

/// What `generate` produced. `es_frame` is 1-based like every index on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomInfo {
    pub phantom: String,
    pub frames: usize,
    pub es_frame: usize,
    pub periodic: bool,
    pub axes: LvAxes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<ShellPhantomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyInfo>,
    pub volumes: usize,
}

/// Everything `track` and friends read from an input directory.
pub struct Dataset {
    pub dir: PathBuf,
    pub info: Option<PhantomInfo>,
    pub sequence: FrameSequence,
}

pub fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} not found: {}", path.display())))
    }
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        let points = dir.join(POINTS);
        require_file(&points, "point file")?;
        let meta = dir.join(PHANTOM);
        let info: Option<PhantomInfo> = if meta.is_file() { Some(io::read_json(&meta)?) } else { None };
        // sequences without metadata are taken to be one cardiac cycle
        let periodic = info.as_ref().is_none_or(|i| i.periodic);
        let sequence = io::read_points_csv(&points, periodic)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            sequence,
        })
    }

    /// 0-based ES frame from the metadata, else the middle frame.
    pub fn es_frame(&self) -> usize {
        match &self.info {
            Some(i) => i.es_frame.saturating_sub(1),
            None => self.sequence.num_frames() / 2,
        }
    }

    pub fn axes(&self) -> Option<LvAxes> {
        self.info.as_ref().map(|i| i.axes)
    }

    /// All volumes if every frame has one, `None` if there are none.
    pub fn volumes(&self) -> Result<Option<Vec<VolumeImage>>, Failure> {
        let paths: Vec<PathBuf> = (0..self.sequence.num_frames())
            .map(|t| self.dir.join(io::volume_file_name(t)))
            .collect();
        let present = paths.iter().filter(|p| p.is_file()).count();
        if present == 0 {
            return Ok(None);
        }
        if present != paths.len() {
            return Err(Failure::usage(format!(
                "{} has {present} of {} volume files",
                self.dir.display(),
                paths.len()
            )));
        }
        Ok(Some(paths.iter().map(|p| io::read_volume(p)).collect::<Result<_, _>>()?))
    }

    pub fn truth(&self, explicit: Option<&Path>) -> Result<Option<GroundTruth>, Failure> {
        let es = self.es_frame();
        match explicit {
            Some(p) => {
                require_file(p, "ground truth")?;
                Ok(Some(io::read_truth_csv(p, es)?))
            }
            None => {
                let p = self.dir.join(TRUTH);
                Ok(if p.is_file() { Some(io::read_truth_csv(&p, es)?) } else { None })
            }
        }
    }
}

/// `x,y,z` rows.
pub fn read_queries(path: &Path) -> Result<Vec<Point3>, Failure> {
    require_file(path, "query file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(e.into()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,z" => {}
        _ => return Err(Failure::usage(format!("{}: expected header `x,y,z`", path.display()))),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match v.as_deref() {
            Ok([x, y, z]) => out.push(Point3::new(*x, *y, *z)),
            _ => return Err(Failure::usage(format!("{}:{}: expected three numbers", path.display(), n + 1))),
        }
    }
    Ok(out)
}
