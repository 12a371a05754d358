use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ObbFrame, PointCloud};
use crate::{Error, Result};

/// Below this many samples the 5% tails hold no more than one point.
pub const MIN_GROUND_SAMPLES: usize = 20;

const TIE_TOLERANCE: f64 = 1e-9;
const FLAT_RATIO_WARNING: f64 = 1.2;

/// Nearest-rank percentile: the sorted element at `ceil(p/100·n) − 1`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::input(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(sorted.len(), p)])
}

fn nearest_rank(n: usize, p: f64) -> usize {
    let rank = (p * n as f64 / 100.0).ceil() as i64 - 1;
    rank.clamp(0, n as i64 - 1) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundSide {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundEstimate {
    pub side: GroundSide,
    pub d_bottom: f64,
    pub d_top: f64,
    /// The two tail spans were indistinguishable; `side` defaulted to low.
    pub tie: bool,
}

/// Picks the end of the vertical axis whose outer 5% is tighter, on the
/// premise that floor points cluster while the top has a long tail.
pub fn estimate_ground_axis(z: &[f64]) -> Result<GroundEstimate> {
    if z.len() < MIN_GROUND_SAMPLES {
        return Err(Error::input(format!(
            "ground estimation needs at least {MIN_GROUND_SAMPLES} samples, got {}",
            z.len()
        )));
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let at = |p: f64| sorted[nearest_rank(n, p)];
    let d_bottom = at(5.0) - at(0.0);
    let d_top = at(100.0) - at(95.0);
    let tie = (d_bottom - d_top).abs() < TIE_TOLERANCE;
    let side = if tie || d_bottom < d_top { GroundSide::Low } else { GroundSide::High };
    Ok(GroundEstimate {
        side,
        d_bottom,
        d_top,
        tie,
    })
}

/// Rigid map `p ↦ R·p + t` from the input frame to the ground-aligned frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl GroundTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// The aligned frame's +Z axis expressed in input coordinates.
    pub fn up(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

#[derive(Clone, Debug)]
pub struct Alignment {
    pub transform: GroundTransform,
    pub cloud: PointCloud,
    pub ground: GroundEstimate,
    pub warnings: Vec<String>,
}

/// Rotates the cloud into the box frame (thinnest extent as Z), turns it
/// upside down if the ground sits at the high end, and shifts it so the 5th
/// height percentile lies at `z = 0`.
pub fn align_to_ground(pc: &PointCloud, obb: &ObbFrame) -> Result<Alignment> {
    let mut warnings = Vec::new();
    if obb.extents.y < FLAT_RATIO_WARNING * obb.extents.z {
        warnings.push(format!(
            "scene is not flat: second extent {:.3} m is within {FLAT_RATIO_WARNING}x of the vertical extent {:.3} m",
            obb.extents.y, obb.extents.z
        ));
    }
    let z: Vec<f64> = pc.points.iter().map(|p| obb.rotation.row(2).dot(&p.transpose())).collect();
    let ground = estimate_ground_axis(&z)?;
    if ground.tie {
        warnings.push(format!(
            "ground side ambiguous (bottom span {:.3e}, top span {:.3e}); assuming the low end",
            ground.d_bottom, ground.d_top
        ));
    }

    let mut rotation = obb.rotation;
    let mut heights = z;
    if ground.side == GroundSide::High {
        // Half turn about X keeps the frame right-handed.
        rotation = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)) * rotation;
        heights.iter_mut().for_each(|h| *h = -*h);
    }
    let floor = percentile(&heights, 5.0)?;
    let transform = GroundTransform {
        rotation,
        translation: Vector3::new(0.0, 0.0, -floor),
    };
    let cloud = PointCloud::new(pc.points.iter().map(|p| transform.apply(p)).collect());
    Ok(Alignment {
        transform,
        cloud,
        ground,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fit_obb;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 5.0).unwrap(), 5.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0).unwrap(), 2.0);
        assert_eq!(percentile(&[3.0, -1.0, 2.0], 0.0).unwrap(), -1.0);
        assert!(percentile(&[], 5.0).is_err());
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    fn skewed_sample() -> Vec<f64> {
        let mut z: Vec<f64> = (0..95).map(|i| 0.05 * i as f64 / 94.0).collect();
        z.extend([0.1, 0.8, 1.5, 2.2, 3.0]);
        z
    }

    #[test]
    fn ground_axis_examples() {
        // n = 100: z(5) is the 5th smallest (≤ 0.05), z(95) the 95th (= 0.05), z(100) = 3.
        let est = estimate_ground_axis(&skewed_sample()).unwrap();
        assert_eq!(est.side, GroundSide::Low);
        assert!((est.d_bottom - 0.05 * 4.0 / 94.0).abs() < 1e-12);
        assert!((est.d_top - 2.95).abs() < 1e-12);
        assert!(!est.tie);

        let neg: Vec<f64> = skewed_sample().iter().map(|v| -v).collect();
        assert_eq!(estimate_ground_axis(&neg).unwrap().side, GroundSide::High);

        let uniform: Vec<f64> = (0..=100).map(f64::from).collect();
        let est = estimate_ground_axis(&uniform).unwrap();
        assert!(est.tie);
        assert_eq!(est.side, GroundSide::Low);

        assert!(estimate_ground_axis(&[0.0; 19]).is_err());
    }

    fn room_cloud() -> PointCloud {
        let mut pts = Vec::new();
        let (lx, ly, h) = (6.0, 4.0, 2.5);
        for i in 0..=60 {
            for j in 0..=40 {
                pts.push(Vector3::new(lx * i as f64 / 60.0, ly * j as f64 / 40.0, 0.0));
            }
        }
        for k in 0..=10 {
            let z = h * k as f64 / 10.0;
            for i in 0..=30 {
                let x = lx * i as f64 / 30.0;
                pts.push(Vector3::new(x, 0.0, z));
                pts.push(Vector3::new(x, ly, z));
            }
            for j in 0..=20 {
                let y = ly * j as f64 / 20.0;
                pts.push(Vector3::new(0.0, y, z));
                pts.push(Vector3::new(lx, y, z));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn aligned_room_keeps_vertical() {
        let pc = room_cloud();
        let obb = fit_obb(&pc).unwrap();
        let al = align_to_ground(&pc, &obb).unwrap();
        assert_eq!(al.ground.side, GroundSide::Low);
        assert!((al.transform.up() - Vector3::z()).norm() < 1e-6);
        assert!(al.warnings.is_empty());
        let floor = percentile(&al.cloud.points.iter().map(|p| p.z).collect::<Vec<_>>(), 5.0).unwrap();
        assert!(floor.abs() < 1e-12);
    }

    #[test]
    fn upside_down_room_is_flipped() {
        let pc = room_cloud();
        let flipped = PointCloud::new(pc.points.iter().map(|p| Vector3::new(p.x, -p.y, -p.z)).collect());
        let obb = fit_obb(&flipped).unwrap();
        let al = align_to_ground(&flipped, &obb).unwrap();
        assert!((al.transform.up() + Vector3::z()).norm() < 1e-6);
        assert!((al.transform.rotation.determinant() - 1.0).abs() < 1e-9);
        let top = al.cloud.points.iter().map(|p| p.z).fold(f64::MIN, f64::max);
        assert!((top - 2.5).abs() < 1e-6);
    }

    #[test]
    fn tall_scene_warns() {
        let mut pts = Vec::new();
        for i in 0..=10 {
            for j in 0..=10 {
                for k in 0..=10 {
                    pts.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.11));
                }
            }
        }
        let pc = PointCloud::new(pts);
        let al = align_to_ground(&pc, &fit_obb(&pc).unwrap()).unwrap();
        assert!(!al.warnings.is_empty());
    }
}
