//! BEV pose queries: score a requested `(x, y, r)` against every stored frame
//! pose and return the closest real frame, or a miss when nothing is close.

use serde::{Deserialize, Serialize};

use crate::scene::{BevPose, GridMeta};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub frame_id: usize,
    pub pose: BevPose,
}

/// Projected pose of every frame plus the grid they are expressed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePoseTable {
    pub grid: GridMeta,
    pub entries: Vec<FramePose>,
}

impl FramePoseTable {
    pub fn new(grid: GridMeta, entries: Vec<FramePose>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::input("frame pose table is empty"));
        }
        let mut ids: Vec<usize> = entries.iter().map(|e| e.frame_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::input(format!("duplicate frame_id {} in pose table", w[0])));
        }
        Ok(Self { grid, entries })
    }

    pub fn get(&self, frame_id: usize) -> Option<&BevPose> {
        self.entries.iter().find(|e| e.frame_id == frame_id).map(|e| &e.pose)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    /// Positional scale in meters.
    pub sigma_p: f64,
    pub beta: f64,
    /// Acceptance threshold on the best similarity.
    pub tau_s: f64,
    /// Tool-call budget per episode.
    pub t_max: usize,
}

impl Default for GroundingParams {
    fn default() -> Self {
        Self {
            sigma_p: 1.0,
            beta: 2.0,
            tau_s: 0.5,
            t_max: 6,
        }
    }
}

impl GroundingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p.is_finite() && self.sigma_p > 0.0) {
            return Err(Error::input(format!("sigma_p must be > 0, got {}", self.sigma_p)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::input(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.tau_s > 0.0 && self.tau_s <= 1.0) {
            return Err(Error::input(format!("tau_s must be in (0, 1], got {}", self.tau_s)));
        }
        if self.t_max == 0 {
            return Err(Error::input("t_max must be >= 1"));
        }
        Ok(())
    }
}

/// Signed heading difference folded into `[-180, 180]` degrees.
pub fn wrap_degrees(d: f64) -> f64 {
    d - 360.0 * (d / 360.0).round()
}

/// `exp(−½(‖Δp‖²/σp² + β²Δr²))` with `Δp` in meters and `Δr` the wrapped
/// heading difference in radians.
pub fn bev_similarity(query: &BevPose, frame: &BevPose, p: &GroundingParams, grid: &GridMeta) -> f64 {
    let dx = (query.x - frame.x) * grid.cell_size;
    let dy = (query.y - frame.y) * grid.cell_size;
    let dr = wrap_degrees(query.r - frame.r).to_radians();
    let d_sq = (dx * dx + dy * dy) / (p.sigma_p * p.sigma_p) + p.beta * p.beta * dr * dr;
    (-0.5 * d_sq).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum QueryResult {
    Hit { frame_id: usize, score: f64 },
    Miss { best_frame_id: usize, best_score: f64 },
}

impl QueryResult {
    pub fn is_hit(&self) -> bool {
        matches!(self, QueryResult::Hit { .. })
    }

    /// Best similarity over the table, hit or not.
    pub fn score(&self) -> f64 {
        match *self {
            QueryResult::Hit { score, .. } => score,
            QueryResult::Miss { best_score, .. } => best_score,
        }
    }

    pub fn best_frame(&self) -> usize {
        match *self {
            QueryResult::Hit { frame_id, .. } => frame_id,
            QueryResult::Miss { best_frame_id, .. } => best_frame_id,
        }
    }
}

/// Scores every frame and keeps the best; equal scores resolve to the
/// smaller `frame_id`.
pub fn retrieve(query: &BevPose, table: &FramePoseTable, p: &GroundingParams) -> Result<QueryResult> {
    let mut best: Option<(usize, f64)> = None;
    for e in &table.entries {
        let s = bev_similarity(query, &e.pose, p, &table.grid);
        best = match best {
            Some((id, bs)) if bs > s || (bs == s && id < e.frame_id) => Some((id, bs)),
            _ => Some((e.frame_id, s)),
        };
    }
    let (frame_id, score) = best.ok_or_else(|| Error::input("frame pose table is empty"))?;
    Ok(if score >= p.tau_s {
        QueryResult::Hit { frame_id, score }
    } else {
        QueryResult::Miss {
            best_frame_id: frame_id,
            best_score: score,
        }
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraArgs {
    camera: Vec<f64>,
}

/// Parses the tool argument object `{"camera": [x, y, r]}`.
pub fn parse_camera_args(json: &str) -> Result<BevPose> {
    let args: CameraArgs =
        serde_json::from_str(json).map_err(|e| Error::input(format!("malformed camera arguments: {e}")))?;
    camera_from_slice(&args.camera)
}

pub fn camera_from_slice(c: &[f64]) -> Result<BevPose> {
    match c {
        [x, y, r] if c.iter().all(|v| v.is_finite()) => Ok(BevPose { x: *x, y: *y, r: *r }),
        [_, _, _] => Err(Error::input("camera values must be finite")),
        _ => Err(Error::input(format!("camera must hold 3 numbers, got {}", c.len()))),
    }
}
