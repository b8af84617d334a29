//! Artifact formats. Frame and point indices are 1-based on disk.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::eval::AblationRow;
use crate::features::VolumeImage;
use crate::model::{ConstraintSet, FrameSequence, Point3, PointId, Trajectory};
use crate::network::{EdgeKind, FlowNetwork, Tail};
use crate::solver::{Extraction, FlowSolution, SolverStats};
use crate::strain::StrainField;
use crate::synth::GroundTruth;

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

/// Splits a CSV document into numbered data rows after checking its header.
fn csv_rows<'a>(text: &'a str, header: &str, path: &str) -> Result<Vec<(usize, Vec<&'a str>)>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(parse_err(path, 1, format!("expected header `{header}`, found `{}`", h.trim()))),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(parse_err(path, n + 1, format!("expected {width} fields, found {}", fields.len())));
        }
        rows.push((n + 1, fields));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(s: &str, name: &str, path: &str, line: usize) -> Result<T, IoError> {
    s.parse().map_err(|_| parse_err(path, line, format!("bad {name} `{s}`")))
}

fn index1(s: &str, name: &str, path: &str, line: usize) -> Result<usize, IoError> {
    let v: usize = field(s, name, path, line)?;
    if v == 0 {
        return Err(parse_err(path, line, format!("{name} is 1-based, found 0")));
    }
    Ok(v - 1)
}

fn coord(fields: &[&str], path: &str, line: usize) -> Result<Point3, IoError> {
    let x = field(fields[0], "x", path, line)?;
    let y = field(fields[1], "y", path, line)?;
    let z = field(fields[2], "z", path, line)?;
    Ok(Point3::new(x, y, z))
}

/// Groups `(outer, inner, value)` rows into dense nested vectors, requiring
/// outer indices `0..n` and, within each, inner indices `0..m`.
fn dense<T: Copy>(rows: Vec<(usize, usize, usize, T)>, what: &str, path: &str) -> Result<Vec<Vec<T>>, IoError> {
    let mut map: BTreeMap<usize, BTreeMap<usize, (usize, T)>> = BTreeMap::new();
    for (line, a, b, v) in rows {
        if map.entry(a).or_default().insert(b, (line, v)).is_some() {
            return Err(parse_err(path, line, format!("duplicate {what} ({}, {})", a + 1, b + 1)));
        }
    }
    let mut out = Vec::with_capacity(map.len());
    for (expect_a, (a, inner)) in map.into_iter().enumerate() {
        if a != expect_a {
            return Err(parse_err(path, 0, format!("missing {what} group {}", expect_a + 1)));
        }
        let mut v = Vec::with_capacity(inner.len());
        for (expect_b, (b, (line, x))) in inner.into_iter().enumerate() {
            if b != expect_b {
                return Err(parse_err(path, line, format!("{what} group {} skips index {}", a + 1, expect_b + 1)));
            }
            v.push(x);
        }
        out.push(v);
    }
    Ok(out)
}

pub fn points_to_csv(seq: &FrameSequence) -> String {
    let mut s = String::from("t,i,x,y,z\n");
    for (t, frame) in seq.frames().iter().enumerate() {
        for (i, p) in frame.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", t + 1, i + 1, p.x, p.y, p.z));
        }
    }
    s
}

pub fn parse_points_csv(text: &str, periodic: bool, path: &str) -> Result<FrameSequence, IoError> {
    let mut rows = Vec::new();
    for (line, f) in csv_rows(text, "t,i,x,y,z", path)? {
        let t = index1(f[0], "t", path, line)?;
        let i = index1(f[1], "i", path, line)?;
        rows.push((line, t, i, coord(&f[2..], path, line)?));
    }
    Ok(FrameSequence::new(dense(rows, "point", path)?, periodic))
}

pub fn write_points_csv(path: &Path, seq: &FrameSequence) -> Result<(), IoError> {
    Ok(fs::write(path, points_to_csv(seq))?)
}

pub fn read_points_csv(path: &Path, periodic: bool) -> Result<FrameSequence, IoError> {
    parse_points_csv(&fs::read_to_string(path)?, periodic, &label(path))
}

pub fn truth_to_csv(truth: &GroundTruth) -> String {
    let mut s = String::from("k,t,x,y,z\n");
    for (k, traj) in truth.positions().iter().enumerate() {
        for (t, p) in traj.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", k + 1, t + 1, p.x, p.y, p.z));
        }
    }
    s
}

/// `es_frame` is 0-based, as in [`GroundTruth`].
pub fn parse_truth_csv(text: &str, es_frame: usize, path: &str) -> Result<GroundTruth, IoError> {
    let mut rows = Vec::new();
    for (line, f) in csv_rows(text, "k,t,x,y,z", path)? {
        let k = index1(f[0], "k", path, line)?;
        let t = index1(f[1], "t", path, line)?;
        rows.push((line, k, t, coord(&f[2..], path, line)?));
    }
    GroundTruth::new(dense(rows, "ground-truth entry", path)?, es_frame).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<(), IoError> {
    Ok(fs::write(path, truth_to_csv(truth))?)
}

pub fn read_truth_csv(path: &Path, es_frame: usize) -> Result<GroundTruth, IoError> {
    parse_truth_csv(&fs::read_to_string(path)?, es_frame, &label(path))
}

pub fn write_volume(path: &Path, image: &VolumeImage) -> Result<(), IoError> {
    let [nx, ny, nz] = image.dims();
    let [sx, sy, sz] = image.spacing();
    let mut buf = format!("dims {nx} {ny} {nz}\nspacing {sx} {sy} {sz}\n").into_bytes();
    buf.reserve(4 * image.voxels().len());
    for v in image.voxels() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(fs::write(path, buf)?)
}

pub fn read_volume(path: &Path) -> Result<VolumeImage, IoError> {
    let p = label(path);
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = |key: &str, line: usize| -> Result<Vec<String>, IoError> {
        let mut s = String::new();
        r.read_line(&mut s)?;
        let mut parts = s.split_whitespace();
        if parts.next() != Some(key) {
            return Err(parse_err(&p, line, format!("expected `{key}` header")));
        }
        let vals: Vec<String> = parts.map(String::from).collect();
        if vals.len() != 3 {
            return Err(parse_err(&p, line, format!("`{key}` needs three values")));
        }
        Ok(vals)
    };
    let d = header("dims", 1)?;
    let s = header("spacing", 2)?;
    let dims = [field(&d[0], "nx", &p, 1)?, field(&d[1], "ny", &p, 1)?, field(&d[2], "nz", &p, 1)?];
    let spacing = [field(&s[0], "sx", &p, 2)?, field(&s[1], "sy", &p, 2)?, field(&s[2], "sz", &p, 2)?];
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let n: usize = dims.iter().product();
    if raw.len() != 4 * n {
        return Err(parse_err(&p, 3, format!("expected {} bytes of voxel data, found {}", 4 * n, raw.len())));
    }
    let voxels = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    VolumeImage::new(dims, spacing, voxels).map_err(|e| parse_err(&p, 3, e.to_string()))
}

/// File name of frame `t` (0-based) in a volume directory.
pub fn volume_file_name(t: usize) -> String {
    format!("volume_{:03}.vol", t + 1)
}

pub fn network_to_csv(network: &FlowNetwork) -> String {
    let mut s = String::from("kind,from_t,from_i,to_t,to_i,weight\n");
    for e in network.edges() {
        let kind = match e.kind {
            EdgeKind::Source => "source",
            EdgeKind::Temporal => "temporal",
            EdgeKind::Loop => "loop",
        };
        let (ft, fi) = match e.from {
            Tail::Source => (String::new(), String::new()),
            Tail::Point(p) => ((p.frame + 1).to_string(), (p.index + 1).to_string()),
        };
        s.push_str(&format!("{kind},{ft},{fi},{},{},{}\n", e.to.frame + 1, e.to.index + 1, e.weight));
    }
    s
}

/// 1-based point reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRef {
    pub t: usize,
    pub i: usize,
}

impl From<PointId> for PointRef {
    fn from(p: PointId) -> Self {
        Self {
            t: p.frame + 1,
            i: p.index + 1,
        }
    }
}

impl PointRef {
    pub fn to_id(self) -> Option<PointId> {
        (self.t >= 1 && self.i >= 1).then(|| PointId::new(self.t - 1, self.i - 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub points: Vec<PointRef>,
    #[serde(rename = "loop")]
    pub loop_target: Option<PointRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMetadata {
    pub constraints: ConstraintSet,
    pub objective: f64,
    pub stats: SolverStats,
    pub incomplete_walks: usize,
    pub shared_nodes: Vec<PointRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub trajectories: Vec<TrajectoryRecord>,
    pub metadata: TrajectoryMetadata,
}

impl TrajectoryFile {
    pub fn new(solution: &FlowSolution, extraction: &Extraction) -> Self {
        Self {
            trajectories: extraction
                .trajectories
                .iter()
                .map(|t| TrajectoryRecord {
                    points: t.points().iter().map(|&p| p.into()).collect(),
                    loop_target: t.loop_closure().map(Into::into),
                })
                .collect(),
            metadata: TrajectoryMetadata {
                constraints: solution.constraints,
                objective: solution.objective,
                stats: solution.stats.clone(),
                incomplete_walks: extraction.incomplete,
                shared_nodes: extraction.shared_nodes.iter().map(|&p| p.into()).collect(),
            },
        }
    }

    /// Trajectories checked against `seq`.
    pub fn trajectories(&self, seq: &FrameSequence) -> Result<Vec<Trajectory>, IoError> {
        let bad = |k: usize, msg: String| parse_err("trajectories", k + 1, msg);
        self.trajectories
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let ids: Vec<PointId> = r
                    .points
                    .iter()
                    .map(|p| p.to_id().filter(|id| seq.contains(*id)).ok_or_else(|| bad(k, format!("point {p:?} not in sequence"))))
                    .collect::<Result<_, _>>()?;
                let closure = match r.loop_target {
                    Some(p) => Some(p.to_id().filter(|id| seq.contains(*id)).ok_or_else(|| bad(k, format!("loop target {p:?} not in sequence")))?),
                    None => None,
                };
                if ids.len() != seq.num_frames() {
                    return Err(bad(k, format!("{} points for {} frames", ids.len(), seq.num_frames())));
                }
                Trajectory::new(ids, closure).map_err(|e| bad(k, e.to_string()))
            })
            .collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// One row per sample and frame; `x,y,z` is the frame-1 sample position and
/// `t` is 1-based.
pub fn strain_to_csv(fields: &[StrainField]) -> String {
    let mut s = String::from("t,x,y,z,Err,Ecc,Ell\n");
    for (t, f) in fields.iter().enumerate() {
        for x in &f.samples {
            let p = x.position;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t + 1,
                p.x,
                p.y,
                p.z,
                x.radial,
                x.circumferential,
                x.longitudinal
            ));
        }
    }
    s
}

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("constraints,overall_median,overall_iqr,es_median,es_iqr,ed_median,ed_iqr\n");
    for r in rows {
        let m = &r.report;
        s.push_str(&format!(
            "\"{}\",{},{},{},{},{},{}\n",
            r.constraints, m.overall_median, m.overall_iqr, m.es_median, m.es_iqr, m.ed_median, m.ed_iqr
        ));
    }
    s
}
