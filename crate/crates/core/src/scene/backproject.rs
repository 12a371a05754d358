use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::{Error, Result};

/// Pinhole intrinsics plus the image size they apply to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::input(format!("focal lengths must be > 0, got ({}, {})", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::input("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input(format!("image size {}x{} is empty", self.width, self.height)));
        }
        Ok(())
    }
}

/// Row-major depth image in meters; non-positive or non-finite values mark
/// missing depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub frame_id: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.values[v * self.width + u]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: PointCloud) {
        self.points.extend(other.points);
    }
}

/// Lifts every `stride`-th valid pixel to world space with
/// `X = R⁻¹(D(u)·K⁻¹ũ − t)`.
pub fn backproject_depth(depth: &DepthMap, k: &Intrinsics, pose: &Pose, stride: usize) -> Result<PointCloud> {
    k.validate()?;
    if stride == 0 {
        return Err(Error::input("stride must be >= 1"));
    }
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::input(format!(
            "frame {}: depth map is {}x{} but intrinsics describe {}x{}",
            depth.frame_id, depth.width, depth.height, k.width, k.height
        )));
    }
    if depth.values.len() != depth.width * depth.height {
        return Err(Error::input(format!(
            "frame {}: depth map holds {} values, expected {}",
            depth.frame_id,
            depth.values.len(),
            depth.width * depth.height
        )));
    }
    let r_inv = pose.rotation.inverse().to_rotation_matrix();
    let mut points = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let d = depth.get(u, v) as f64;
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let cam = Vector3::new(d * (u as f64 - k.cx) / k.fx, d * (v as f64 - k.cy) / k.fy, d);
            points.push(r_inv * (cam - pose.translation));
        }
    }
    Ok(PointCloud { points })
}

/// Inverse of the back-projection: world point to `(u, v, depth)`.
pub fn project_point(x: &Vector3<f64>, k: &Intrinsics, pose: &Pose) -> (f64, f64, f64) {
    let cam = pose.rotation * x + pose.translation;
    (k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy, cam.z)
}
