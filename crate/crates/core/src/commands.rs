//! The pipeline steps behind each CLI subcommand. Each one reads its inputs,
//! writes its artifacts atomically and returns a summary for stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CellSize, Config};
use crate::dpp::select_keyframes;
use crate::episode::{group_advantages, run_episode, total_reward, AnswerKind, Policy, RewardBreakdown, Task, Trajectory};
use crate::grounding::{camera_from_slice, retrieve, FramePose, QueryResult};
use crate::io::{
    grid_bytes, list_depth_frames, read_depth, read_intrinsics, read_points, read_scores, read_trajectory, scores_bytes, sha256_hex,
    to_json_bytes, trajectory_bytes, write_atomic, write_json, BevMeta, FramePosesFile, GroundRecord, Manifest,
    SceneBundle, BEV_GRID_FILE, BEV_META_FILE, FRAME_POSES_FILE, MANIFEST_FILE, SCORES_FILE, TRAJECTORY_FILE,
};
use crate::scene::{
    align_to_ground, auto_cell_size, backproject_depth, camera_to_bev_pose, fit_obb, rasterize_bev, BevPose,
    PointCloud,
};
use crate::semantic::SemanticScores;
use crate::synth::{generate, write_scene, SynthParams};
use crate::{Error, Result};

pub const SELECTION_FILE: &str = "selection.json";
pub const EPISODE_LOG_FILE: &str = "episodes.jsonl";
pub const RESCORED_LOG_FILE: &str = "rescored.jsonl";

/// Largest BEV grid a fixed cell size may produce.
pub const MAX_GRID_CELLS: usize = 1 << 24;

const OPTIONS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Clone, Debug, Default)]
pub struct PreprocessInputs {
    pub trajectory: PathBuf,
    pub depth: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub scores: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub n_frames: usize,
    pub n_points: usize,
    pub source: String,
    pub grid_width: usize,
    pub grid_height: usize,
    pub cell_size: f64,
    pub warnings: Vec<String>,
}

fn load_cloud(inputs: &PreprocessInputs, poses: &[crate::geometry::Pose], stride: usize) -> Result<(PointCloud, &'static str)> {
    let depth_frames = match &inputs.depth {
        Some(dir) => list_depth_frames(dir)?,
        None => Vec::new(),
    };
    if let (Some(dir), false) = (&inputs.depth, depth_frames.is_empty()) {
        let expected: Vec<usize> = (0..poses.len()).collect();
        if depth_frames != expected {
            return Err(Error::input(format!(
                "{}: {} depth maps for {} trajectory frames (ids must be 0..{})",
                dir.display(),
                depth_frames.len(),
                poses.len(),
                poses.len()
            )));
        }
        let k = read_intrinsics(dir)?;
        let mut cloud = PointCloud::default();
        for pose in poses {
            let depth = read_depth(dir, pose.frame_id, &k)?;
            cloud.extend(backproject_depth(&depth, &k, pose, stride)?);
        }
        return Ok((cloud, "depth"));
    }
    match &inputs.points {
        Some(path) => Ok((read_points(path)?, "points")),
        None => Err(Error::input("no input geometry: give a depth directory with frames or a point file")),
    }
}

/// Trajectory + depth (or raw points) → ground-aligned BEV bundle.
pub fn preprocess(inputs: &PreprocessInputs, cfg: &Config, out: &Path) -> Result<PreprocessSummary> {
    let poses = read_trajectory(&inputs.trajectory)?;
    let n = poses.len();
    let scores = inputs.scores.as_deref().map(read_scores).transpose()?;
    if let (Some(s), Some(path)) = (&scores, &inputs.scores) {
        if s.len() != n {
            return Err(Error::parse(path, 0, format!("{} scores for {n} trajectory frames", s.len())));
        }
    }

    let (cloud, source) = load_cloud(inputs, &poses, cfg.stride)?;
    let obb = fit_obb(&cloud)?;
    let aligned = align_to_ground(&cloud, &obb)?;
    let cell_size = match cfg.cell_size {
        CellSize::Auto => auto_cell_size(&aligned.cloud)?,
        CellSize::Meters(cs) => cs,
    };
    let grid = rasterize_bev(&aligned.cloud, cell_size)?;
    if grid.meta.width * grid.meta.height > MAX_GRID_CELLS {
        return Err(Error::Guard(format!(
            "cell size {cell_size} gives a {}x{} grid, above {MAX_GRID_CELLS} cells",
            grid.meta.width, grid.meta.height
        )));
    }

    let mut entries = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for pose in &poses {
        let est = camera_to_bev_pose(pose, &aligned.transform, &grid.meta);
        if est.degenerate_heading {
            degenerate.push(pose.frame_id);
        }
        entries.push(FramePose { frame_id: pose.frame_id, pose: est.pose });
    }

    let mut warnings = aligned.warnings.clone();
    if !degenerate.is_empty() {
        warnings.push(format!("{} frame(s) look straight up or down; heading set to 0", degenerate.len()));
    }
    let meta = BevMeta {
        grid: grid.meta,
        channels: ["occupancy", "z_min", "z_max", "z_mean"].map(String::from).to_vec(),
        ground: GroundRecord::new(&aligned.transform, aligned.ground),
        obb_extents: [obb.extents.x, obb.extents.y, obb.extents.z],
        n_points: cloud.len(),
        source: source.into(),
        warnings: warnings.clone(),
        config: *cfg,
    };
    let frame_poses = FramePosesFile { grid: grid.meta, entries, degenerate_headings: degenerate, config: *cfg };

    let mut files: Vec<(&str, Vec<u8>)> = vec![
        (TRAJECTORY_FILE, trajectory_bytes(&poses)),
        (BEV_META_FILE, to_json_bytes(&meta)),
        (BEV_GRID_FILE, grid_bytes(&grid)),
        (FRAME_POSES_FILE, to_json_bytes(&frame_poses)),
    ];
    if let Some(s) = &scores {
        files.push((SCORES_FILE, scores_bytes(s)));
    }
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
        hashes.insert(name.to_string(), sha256_hex(bytes));
    }
    write_json(&out.join(MANIFEST_FILE), &Manifest { n_frames: n, files: hashes, config: *cfg })?;

    Ok(PreprocessSummary {
        n_frames: n,
        n_points: cloud.len(),
        source: source.into(),
        grid_width: grid.meta.width,
        grid_height: grid.meta.height,
        cell_size,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
    pub objective: f64,
    pub floor_filled: usize,
    pub n_frames: usize,
    /// `"file"`, `"bundle"` or `"uniform"`.
    pub scores_source: String,
    pub config: Config,
}

/// Keyframe selection over a bundle's trajectory. Scores come from `scores`,
/// else from the bundle, else every frame counts as equally relevant.
pub fn select(bundle_dir: &Path, scores: Option<&Path>, cfg: &Config, out: &Path) -> Result<SelectionFile> {
    let bundle = SceneBundle::load(bundle_dir)?;
    let n = bundle.poses.len();
    let (scores, source) = match (scores, bundle.scores) {
        (Some(path), _) => (read_scores(path)?, "file"),
        (None, Some(s)) => (s, "bundle"),
        (None, None) => (SemanticScores::uniform(n), "uniform"),
    };
    let result = select_keyframes(&bundle.poses, &scores, &cfg.select_params())?;
    let file = SelectionFile {
        indices: result.indices,
        gains: result.gains,
        objective: result.objective,
        floor_filled: result.floor_filled,
        n_frames: n,
        scores_source: source.into(),
        config: *cfg,
    };
    write_json(&out.join(SELECTION_FILE), &file)?;
    Ok(file)
}

/// Accepts `[x, y, r]` or the tool argument object `{"camera": [x, y, r]}`.
pub fn parse_camera(text: &str) -> Result<BevPose> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::input(format!("camera is not valid JSON: {e}")))?;
    let arr = match &value {
        serde_json::Value::Object(m) if m.len() == 1 => m.get("camera"),
        serde_json::Value::Array(_) => Some(&value),
        _ => None,
    }
    .and_then(|v| v.as_array())
    .ok_or_else(|| Error::input("camera must be [x, y, r] or {\"camera\": [x, y, r]}"))?;
    let nums: Option<Vec<f64>> = arr.iter().map(|v| v.as_f64()).collect();
    camera_from_slice(&nums.ok_or_else(|| Error::input("camera values must be numbers"))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<usize>,
    pub best_frame_id: usize,
    pub score: f64,
    pub config: Config,
}

pub fn query(bundle_dir: &Path, camera: &BevPose, cfg: &Config) -> Result<QueryOutput> {
    let bundle = SceneBundle::load(bundle_dir)?;
    let table = bundle.table()?;
    let p = cfg.grounding_params();
    p.validate()?;
    let r = retrieve(camera, &table, &p)?;
    Ok(QueryOutput {
        outcome: if r.is_hit() { "hit" } else { "miss" }.into(),
        frame_id: match r {
            QueryResult::Hit { frame_id, .. } => Some(frame_id),
            QueryResult::Miss { .. } => None,
        },
        best_frame_id: r.best_frame(),
        score: r.score(),
        config: *cfg,
    })
}

/// One line of the episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: usize,
    /// Episodes sharing a group answer the same question.
    pub group: usize,
    pub policy: Policy,
    pub question: String,
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub rewards: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    pub config: Config,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardMeans {
    pub acc: f64,
    pub format: f64,
    pub tool: f64,
    pub spatial: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episodes: usize,
    pub groups: usize,
    pub mean: RewardMeans,
    pub config: Config,
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeOptions {
    pub policy: Policy,
    pub episodes: usize,
    pub group_size: usize,
    pub seed: u64,
}

fn summarize(records: &[EpisodeRecord], cfg: &Config) -> EpisodeSummary {
    let n = records.len().max(1) as f64;
    let mut m = RewardMeans::default();
    for r in records {
        m.acc += r.rewards.acc / n;
        m.format += r.rewards.format / n;
        m.tool += r.rewards.tool / n;
        m.spatial += r.rewards.spatial / n;
        m.total += r.rewards.total / n;
    }
    let groups = records.iter().map(|r| r.group).max().map_or(0, |g| g + 1);
    EpisodeSummary { episodes: records.len(), groups, mean: m, config: *cfg }
}

/// Fills `advantage` for every group of two or more episodes.
fn assign_advantages(records: &mut [EpisodeRecord]) -> Result<()> {
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_group.entry(r.group).or_default().push(i);
    }
    for members in by_group.values() {
        if members.len() < 2 {
            records[members[0]].advantage = None;
            continue;
        }
        let rewards: Vec<f64> = members.iter().map(|&i| records[i].rewards.total).collect();
        for (&i, a) in members.iter().zip(group_advantages(&rewards)?) {
            records[i].advantage = Some(a);
        }
    }
    Ok(())
}

fn jsonl_bytes(records: &[EpisodeRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("serializable record");
        out.push(b'\n');
    }
    out
}

/// Runs scripted episodes against a bundle. Questions are drawn per group
/// from the seed: a gold frame and a gold option letter.
pub fn episode(bundle_dir: &Path, opts: &EpisodeOptions, cfg: &Config, out: &Path) -> Result<EpisodeSummary> {
    if opts.episodes == 0 || opts.group_size == 0 || !opts.episodes.is_multiple_of(opts.group_size) {
        return Err(Error::input(format!(
            "episodes ({}) must be a positive multiple of the group size ({})",
            opts.episodes, opts.group_size
        )));
    }
    let bundle = SceneBundle::load(bundle_dir)?;
    let table = bundle.table()?;
    let params = cfg.grounding_params();
    let reward_cfg = cfg.reward_config();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.episodes);
    for group in 0..opts.episodes / opts.group_size {
        let gold_frame = rng.random_range(0..table.len());
        let task = Task {
            question: format!("Which option best describes what is visible from frame {gold_frame}?"),
            gold: OPTIONS[rng.random_range(0..OPTIONS.len())].into(),
            kind: AnswerKind::MultipleChoice,
            gold_frame: Some(table.entries[gold_frame].frame_id),
        };
        for _ in 0..opts.group_size {
            let trajectory = run_episode(opts.policy, &task, &table, &params, &mut rng)?;
            let rewards = total_reward(&trajectory, &reward_cfg);
            records.push(EpisodeRecord {
                episode_id: records.len(),
                group,
                policy: opts.policy,
                question: task.question.clone(),
                trajectory,
                rewards,
                advantage: None,
                config: *cfg,
            });
        }
    }
    assign_advantages(&mut records)?;
    write_atomic(&out.join(EPISODE_LOG_FILE), &jsonl_bytes(&records))?;
    Ok(summarize(&records, cfg))
}

pub fn read_episode_log(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Re-scores an episode log under `cfg` and writes the result next to it
/// under `out`.
pub fn reward(log: &Path, cfg: &Config, out: &Path) -> Result<EpisodeSummary> {
    let mut records = read_episode_log(log)?;
    let reward_cfg = cfg.reward_config();
    for r in &mut records {
        r.rewards = total_reward(&r.trajectory, &reward_cfg);
        r.config = *cfg;
    }
    assign_advantages(&mut records)?;
    write_atomic(&out.join(RESCORED_LOG_FILE), &jsonl_bytes(&records))?;
    Ok(summarize(&records, cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

pub fn synth(params: &SynthParams, out: &Path) -> Result<SynthSummary> {
    let scene = generate(params);
    write_scene(out, &scene)?;
    Ok(SynthSummary { frames: params.frames, width: params.width, height: params.height, seed: params.seed })
}
