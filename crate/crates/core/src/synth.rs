//! Synthetic indoor scene with known ground truth.
//!
//! A rectangular room (floor and four walls, open ceiling) holds a few
//! furniture boxes. A camera circles the room centre at a fixed height,
//! tilted down, and depth maps are ray cast against the geometry. The whole
//! scene can be turned by a random world rotation, so the up axis is not
//! given away by the coordinate frame.

use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::io::{write_depth, write_json, write_scores, write_trajectory, INTRINSICS_FILE, SCORES_FILE, TRAJECTORY_FILE};
use crate::scene::{heading_from_direction, DepthMap, Intrinsics};
use crate::semantic::SemanticScores;
use crate::Result;

pub const TRUTH_FILE: &str = "truth.json";
pub const DEPTH_DIR: &str = "depth";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub boxes: usize,
    pub camera_height: f64,
    /// Downward pitch of the optical axis in degrees.
    pub tilt_deg: f64,
    pub rotate_world: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frames: 500,
            width: 80,
            height: 60,
            fov_deg: 75.0,
            boxes: 4,
            camera_height: 1.5,
            tilt_deg: 15.0,
            rotate_world: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Slab test; entry distance along the ray, if it hits in front.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut n, mut f) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub lx: f64,
    pub ly: f64,
    pub wall_height: f64,
    pub boxes: Vec<Aabb>,
}

/// What a depth ray ran into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Structure,
    Furniture,
}

impl Room {
    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Surface)> {
        let mut best: Option<(f64, Surface)> = None;
        let mut offer = |t: f64, s: Surface| {
            if t > 0.0 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, s));
            }
        };
        let inside = |p: Vector3<f64>, eps: f64| {
            p.x >= -eps && p.x <= self.lx + eps && p.y >= -eps && p.y <= self.ly + eps && p.z >= -eps && p.z <= self.wall_height + eps
        };
        let planes = [(2, 0.0), (0, 0.0), (0, self.lx), (1, 0.0), (1, self.ly)];
        for (axis, at) in planes {
            if d[axis].abs() < 1e-15 {
                continue;
            }
            let t = (at - o[axis]) / d[axis];
            if t > 0.0 && inside(o + d * t, 1e-9) {
                offer(t, Surface::Structure);
            }
        }
        for b in &self.boxes {
            if let Some(t) = b.hit(o, d) {
                offer(t, Surface::Furniture);
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: usize,
    /// Camera centre in room coordinates (z up).
    pub center: [f64; 3],
    /// Heading of the optical axis in room coordinates, using the BEV
    /// convention on the room's xy plane.
    pub heading_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub params: SynthParams,
    pub room: Room,
    /// Room up axis in output (possibly rotated) world coordinates.
    pub up: [f64; 3],
    /// Rotation from room to world coordinates, row-major.
    pub world_rotation: [[f64; 3]; 3],
    pub frames: Vec<FrameTruth>,
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub depths: Vec<DepthMap>,
    pub scores: SemanticScores,
    pub truth: SynthTruth,
}

fn random_world_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0) + 1e-3,
    ));
    Rotation3::from_axis_angle(&axis, rng.random_range(0.3..std::f64::consts::PI))
}

fn build_room(rng: &mut ChaCha8Rng, boxes: usize) -> Room {
    let lx = rng.random_range(6.0..9.0);
    let ly = rng.random_range(4.5..6.0);
    let mut out = Vec::with_capacity(boxes);
    for _ in 0..boxes {
        let (sx, sy) = (rng.random_range(0.4..1.4), rng.random_range(0.4..1.2));
        let sz = rng.random_range(0.4..1.0);
        // Furniture stands near the walls so the camera circle stays clear.
        let along_x = rng.random_bool(0.5);
        let (x0, y0) = if along_x {
            let y0 = if rng.random_bool(0.5) { 0.1 } else { ly - 0.1 - sy };
            (rng.random_range(0.1..lx - 0.1 - sx), y0)
        } else {
            let x0 = if rng.random_bool(0.5) { 0.1 } else { lx - 0.1 - sx };
            (x0, rng.random_range(0.1..ly - 0.1 - sy))
        };
        out.push(Aabb { min: [x0, y0, 0.0], max: [x0 + sx, y0 + sy, sz] });
    }
    Room { lx, ly, wall_height: 2.5, boxes: out }
}

/// Generates a scene deterministically from `params.seed`.
pub fn generate(params: &SynthParams) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let room = build_room(&mut rng, params.boxes);
    let world = if params.rotate_world { random_world_rotation(&mut rng) } else { Rotation3::identity() };

    let fx = (params.width as f64 / 2.0) / (params.fov_deg.to_radians() / 2.0).tan();
    let intrinsics = Intrinsics {
        width: params.width,
        height: params.height,
        fx,
        fy: fx,
        cx: (params.width as f64 - 1.0) / 2.0,
        cy: (params.height as f64 - 1.0) / 2.0,
    };

    let radius = 0.25 * room.lx.min(room.ly);
    let tilt = params.tilt_deg.to_radians();
    let mut poses = Vec::with_capacity(params.frames);
    let mut depths = Vec::with_capacity(params.frames);
    let mut raw = Vec::with_capacity(params.frames);
    let mut frames = Vec::with_capacity(params.frames);
    for i in 0..params.frames {
        let phase = std::f64::consts::TAU * i as f64 / params.frames as f64;
        let center = Vector3::new(
            room.lx / 2.0 + radius * phase.cos(),
            room.ly / 2.0 + radius * phase.sin(),
            params.camera_height,
        );
        // Looking outward, turned 30° ahead along the path.
        let yaw = phase + 30f64.to_radians();
        let forward = Vector3::new(tilt.cos() * yaw.cos(), tilt.cos() * yaw.sin(), -tilt.sin());
        let right = forward.cross(&Vector3::z()).normalize();
        let down = forward.cross(&right);
        let room_to_cam = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]));

        let mut values = Vec::with_capacity(params.width * params.height);
        let mut furniture = 0usize;
        let mut valid = 0usize;
        for v in 0..params.height {
            for u in 0..params.width {
                let ray_cam = Vector3::new((u as f64 - intrinsics.cx) / fx, (v as f64 - intrinsics.cy) / fx, 1.0);
                let ray = room_to_cam.inverse() * ray_cam;
                match room.cast(&center, &ray) {
                    Some((t, s)) => {
                        valid += 1;
                        furniture += usize::from(s == Surface::Furniture);
                        values.push(t as f32);
                    }
                    None => values.push(0.0),
                }
            }
        }
        raw.push(if valid == 0 { 0.0 } else { furniture as f64 / valid as f64 });

        let cam_rot = room_to_cam * world.inverse();
        let world_center = world * center;
        poses.push(Pose::from_rotation(i, cam_rot, -(cam_rot * world_center)));
        depths.push(DepthMap { frame_id: i, width: params.width, height: params.height, values });
        frames.push(FrameTruth {
            frame_id: i,
            center: [center.x, center.y, center.z],
            heading_deg: heading_from_direction(forward.x, forward.y).unwrap_or(0.0),
        });
    }

    let up = world * Vector3::z();
    let w = world.matrix();
    let truth = SynthTruth {
        params: *params,
        room,
        up: [up.x, up.y, up.z],
        world_rotation: [0, 1, 2].map(|r| [w[(r, 0)], w[(r, 1)], w[(r, 2)]]),
        frames,
    };
    let scores = SemanticScores::from_raw(raw).expect("fractions lie in [0, 1]");
    SynthScene { intrinsics, poses, depths, scores, truth }
}

/// Writes `trajectory.jsonl`, `scores.json`, `depth/` and `truth.json`.
pub fn write_scene(dir: &Path, scene: &SynthScene) -> Result<()> {
    write_trajectory(&dir.join(TRAJECTORY_FILE), &scene.poses)?;
    write_scores(&dir.join(SCORES_FILE), &scene.scores)?;
    let depth_dir = dir.join(DEPTH_DIR);
    write_json(&depth_dir.join(INTRINSICS_FILE), &scene.intrinsics)?;
    for d in &scene.depths {
        write_depth(&depth_dir, d)?;
    }
    write_json(&dir.join(TRUTH_FILE), &scene.truth)
}
