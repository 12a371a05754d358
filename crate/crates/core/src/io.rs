//! On-disk formats: inputs (trajectory, scores, depth, raw points) and the
//! preprocessed scene bundle.
//!
//! Text formats are JSON; depth maps, point files and the BEV grid are raw
//! little-endian `f32`. Every writer goes through [`write_atomic`], and every
//! reader rejects what its writer could not have produced.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::geometry::Pose;
use crate::grounding::{FramePose, FramePoseTable};
use crate::scene::{BevGrid, DepthMap, GridMeta, GroundEstimate, GroundTransform, Intrinsics, PointCloud, BEV_CHANNELS};
use crate::semantic::SemanticScores;
use crate::{Error, Result};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SCORES_FILE: &str = "scores.json";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const BEV_META_FILE: &str = "bev_meta.json";
pub const BEV_GRID_FILE: &str = "bev_grid.bin";
pub const FRAME_POSES_FILE: &str = "frame_poses.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32_le(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::parse(path, 0, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    frame_id: usize,
    t: [f64; 3],
    q: [f64; 4],
}

/// One JSON object per line, frame ids `0, 1, …, n−1` in order.
pub fn read_trajectory(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if rec.frame_id != poses.len() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected frame_id {}, found {}", poses.len(), rec.frame_id),
            ));
        }
        poses.push(Pose::from_wxyz(rec.frame_id, rec.q, rec.t).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    if poses.is_empty() {
        return Err(Error::parse(path, 0, "trajectory holds no frames"));
    }
    Ok(poses)
}

pub fn trajectory_bytes(poses: &[Pose]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in poses {
        let t = p.translation;
        let rec = TrajectoryRecord { frame_id: p.frame_id, t: [t.x, t.y, t.z], q: p.wxyz() };
        serde_json::to_writer(&mut out, &rec).expect("serializable record");
        out.push(b'\n');
    }
    out
}

pub fn write_trajectory(path: &Path, poses: &[Pose]) -> Result<()> {
    write_atomic(path, &trajectory_bytes(poses))
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keywords: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_keyword: Option<Vec<Vec<f64>>>,
}

/// `{"raw": [...]}` or `{"keywords": [...], "per_keyword": [[...], ...]}`
/// with one row of keyword scores per frame.
pub fn read_scores(path: &Path) -> Result<SemanticScores> {
    let file: ScoresFile = read_json(path)?;
    let scores = match file {
        ScoresFile { raw: Some(raw), keywords: None, per_keyword: None } => SemanticScores::from_raw(raw),
        ScoresFile { raw: None, keywords: Some(k), per_keyword: Some(m) } => SemanticScores::from_keywords(k, m),
        _ => Err(Error::input("expected either \"raw\" or both \"keywords\" and \"per_keyword\"")),
    };
    scores.map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn scores_bytes(s: &SemanticScores) -> Vec<u8> {
    let file = match (&s.keywords, &s.per_keyword) {
        (Some(k), Some(m)) => ScoresFile { keywords: Some(k.clone()), per_keyword: Some(m.clone()), ..Default::default() },
        _ => ScoresFile { raw: Some(s.raw.clone()), ..Default::default() },
    };
    to_json_bytes(&file)
}

pub fn write_scores(path: &Path, s: &SemanticScores) -> Result<()> {
    write_atomic(path, &scores_bytes(s))
}

pub fn depth_file_name(frame_id: usize) -> String {
    format!("{frame_id:06}.bin")
}

/// Frame ids of the `NNNNNN.bin` files in a depth directory, ascending.
pub fn list_depth_frames(dir: &Path) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".bin") {
            let id = stem
                .parse::<usize>()
                .map_err(|_| Error::parse(entry.path(), 0, "depth file names must be <frame_id>.bin"))?;
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn read_intrinsics(dir: &Path) -> Result<Intrinsics> {
    let path = dir.join(INTRINSICS_FILE);
    let k: Intrinsics = read_json(&path)?;
    k.validate().map_err(|e| Error::parse(&path, 0, e.to_string()))?;
    Ok(k)
}

pub fn read_depth(dir: &Path, frame_id: usize, k: &Intrinsics) -> Result<DepthMap> {
    let path = dir.join(depth_file_name(frame_id));
    let values = f32_le(&read_bytes(&path)?, &path)?;
    if values.len() != k.width * k.height {
        return Err(Error::parse(
            &path,
            0,
            format!("{} depth values, intrinsics describe {}x{}", values.len(), k.width, k.height),
        ));
    }
    Ok(DepthMap { frame_id, width: k.width, height: k.height, values })
}

pub fn write_depth(dir: &Path, depth: &DepthMap) -> Result<()> {
    write_atomic(&dir.join(depth_file_name(depth.frame_id)), &f32_bytes(depth.values.iter().copied()))
}

/// Raw point file: consecutive little-endian `f32` triples `x, y, z`.
pub fn read_points(path: &Path) -> Result<PointCloud> {
    let values = f32_le(&read_bytes(path)?, path)?;
    if values.len() % 3 != 0 {
        return Err(Error::parse(path, 0, format!("{} floats is not a whole number of xyz triples", values.len())));
    }
    Ok(PointCloud::new(
        values.chunks_exact(3).map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect(),
    ))
}

pub fn write_points(path: &Path, pc: &PointCloud) -> Result<()> {
    write_atomic(path, &f32_bytes(pc.points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundRecord {
    /// Rows of the rotation into the ground-aligned frame.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub estimate: GroundEstimate,
}

impl GroundRecord {
    pub fn new(t: &GroundTransform, estimate: GroundEstimate) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [t.translation.x, t.translation.y, t.translation.z],
            estimate,
        }
    }

    pub fn transform(&self) -> GroundTransform {
        let r = &self.rotation;
        GroundTransform {
            rotation: Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
            translation: Vector3::from(self.translation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevMeta {
    pub grid: GridMeta,
    pub channels: Vec<String>,
    pub ground: GroundRecord,
    /// OBB extents of the merged cloud, largest first.
    pub obb_extents: [f64; 3],
    pub n_points: usize,
    /// `"depth"` or `"points"`.
    pub source: String,
    pub warnings: Vec<String>,
    pub config: Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePosesFile {
    pub grid: GridMeta,
    pub entries: Vec<FramePose>,
    /// Frames whose optical axis was near vertical; their heading is 0.
    pub degenerate_headings: Vec<usize>,
    pub config: Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_frames: usize,
    /// SHA-256 of every other bundle file, by name.
    pub files: BTreeMap<String, String>,
    pub config: Config,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn grid_bytes(grid: &BevGrid) -> Vec<u8> {
    f32_bytes(grid.data.iter().copied())
}

pub fn read_grid(path: &Path, meta: &GridMeta) -> Result<BevGrid> {
    let data = f32_le(&read_bytes(path)?, path)?;
    let expected = meta.width * meta.height * BEV_CHANNELS;
    if data.len() != expected {
        return Err(Error::parse(path, 0, format!("{} floats, grid metadata implies {expected}", data.len())));
    }
    Ok(BevGrid { meta: *meta, data })
}

/// A preprocessed scene directory.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub dir: PathBuf,
    pub poses: Vec<Pose>,
    pub scores: Option<SemanticScores>,
    pub meta: BevMeta,
    pub grid: BevGrid,
    pub frame_poses: FramePosesFile,
    pub manifest: Manifest,
}

impl SceneBundle {
    /// Loads a bundle, checking every file against the manifest hash and the
    /// frame counts against each other.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        for (name, hash) in &manifest.files {
            let path = dir.join(name);
            if sha256_hex(&read_bytes(&path)?) != *hash {
                return Err(Error::parse(&path, 0, "content does not match the manifest hash"));
            }
        }
        let poses = read_trajectory(&dir.join(TRAJECTORY_FILE))?;
        let scores_path = dir.join(SCORES_FILE);
        let scores = if manifest.files.contains_key(SCORES_FILE) { Some(read_scores(&scores_path)?) } else { None };
        let meta: BevMeta = read_json(&dir.join(BEV_META_FILE))?;
        let grid = read_grid(&dir.join(BEV_GRID_FILE), &meta.grid)?;
        let frame_poses: FramePosesFile = read_json(&dir.join(FRAME_POSES_FILE))?;
        let n = manifest.n_frames;
        if poses.len() != n || frame_poses.entries.len() != n || scores.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::parse(dir.join(MANIFEST_FILE), 0, "frame counts disagree across bundle files"));
        }
        Ok(Self { dir: dir.to_path_buf(), poses, scores, meta, grid, frame_poses, manifest })
    }

    pub fn table(&self) -> Result<FramePoseTable> {
        FramePoseTable::new(self.frame_poses.grid, self.frame_poses.entries.clone())
    }
}
