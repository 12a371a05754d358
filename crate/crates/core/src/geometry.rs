//! Rigid-body camera poses and the scale-aware SE(3) pose distance.
//!
//! Rotations are stored as unit quaternions and turned into 3×3 matrices when
//! the trace formula for the geodesic angle is evaluated.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Largest accepted deviation of an ingested quaternion's norm from 1.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

/// A camera pose `(R, t)` attached to a video frame.
///
/// The pair follows the extrinsic convention used by depth back-projection:
/// a world point `X` maps into the camera as `R·X + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub frame_id: usize,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose from a `(w, x, y, z)` quaternion. Small norm deviations
    /// are renormalized; anything further than [`QUATERNION_NORM_TOLERANCE`]
    /// from unit norm is rejected.
    pub fn from_wxyz(frame_id: usize, q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        if q.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input(format!("frame {frame_id}: non-finite pose component")));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::input(format!(
                "frame {frame_id}: quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1"
            )));
        }
        Ok(Self {
            frame_id,
            rotation: UnitQuaternion::from_quaternion(quat),
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    pub fn from_rotation(frame_id: usize, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            frame_id,
            rotation: UnitQuaternion::from_rotation_matrix(&rotation),
            translation,
        }
    }

    pub fn identity(frame_id: usize) -> Self {
        Self {
            frame_id,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Optical axis (+Z of the camera) expressed in world coordinates.
    pub fn forward_axis(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }
}

/// Translation scale and rotation weight of the pose distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryParams {
    pub sigma_t: f64,
    pub beta: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            sigma_t: 1.0,
            beta: 2.0,
        }
    }
}

impl GeometryParams {
    pub fn new(sigma_t: f64, beta: f64) -> Result<Self> {
        let p = Self { sigma_t, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t.is_finite() && self.sigma_t > 0.0) {
            return Err(Error::input(format!("sigma_t must be > 0, got {}", self.sigma_t)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::input(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Geodesic angle `arccos((tr(RaᵀRb) − 1) / 2)` in `[0, π]`.
///
/// The arccos argument is clamped to `[-1, 1]`, so round-off near 0 or π
/// never produces NaN.
pub fn rotation_geodesic(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let ra = a.to_rotation_matrix();
    let rb = b.to_rotation_matrix();
    let trace = (ra.matrix().transpose() * rb.matrix()).trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Squared pose distance `‖ti − tj‖² / σt² + β² θ(Ri, Rj)²`.
pub fn pose_distance_sq(i: &Pose, j: &Pose, p: &GeometryParams) -> f64 {
    let dt = (i.translation - j.translation).norm_squared() / (p.sigma_t * p.sigma_t);
    let theta = rotation_geodesic(&i.rotation, &j.rotation);
    dt + p.beta * p.beta * theta * theta
}

/// Gaussian affinity `exp(−d²/2)`.
pub fn pose_affinity(d_sq: f64) -> f64 {
    (-0.5 * d_sq).exp()
}
