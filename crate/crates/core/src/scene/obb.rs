use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3};

use super::PointCloud;
use crate::{Error, Result};

/// Oriented box around a cloud. `rotation` maps global coordinates into the
/// box frame (its rows are the box axes); `extents` are sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct ObbFrame {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub extents: Vector3<f64>,
}

impl ObbFrame {
    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    /// Box axis of the smallest extent, in global coordinates.
    pub fn thin_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

const COARSE_START_DEG: f64 = 10.0;
const COARSE_END_DEG: f64 = 0.15;
const COARSE_ROUNDS: usize = 3;
const POLISH_END_DEG: f64 = 1e-6;
const SEARCH_SAMPLE: usize = 20_000;
const RANK_TOLERANCE: f64 = 1e-10;

fn bounds(points: &[Vector3<f64>], r: &Matrix3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let b = r * p;
        lo = lo.inf(&b);
        hi = hi.sup(&b);
    }
    (lo, hi)
}

fn aligned_volume(points: &[Vector3<f64>], r: &Matrix3<f64>) -> f64 {
    let (lo, hi) = bounds(points, r);
    let e = hi - lo;
    e.x * e.y * e.z
}

/// Box with the given orientation, reordered so extents descend and kept
/// right-handed.
pub fn obb_from_rotation(points: &[Vector3<f64>], r: &Matrix3<f64>) -> ObbFrame {
    let (lo, hi) = bounds(points, r);
    let ext = hi - lo;
    let mid = (lo + hi) * 0.5;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| ext[b].total_cmp(&ext[a]).then(a.cmp(&b)));

    let mut rotation = Matrix3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        rotation.set_row(dst, &r.row(src));
    }
    if rotation.determinant() < 0.0 {
        let flipped = -rotation.row(2);
        rotation.set_row(2, &flipped);
    }
    let center = r.transpose() * mid;
    ObbFrame {
        rotation,
        center,
        extents: Vector3::new(ext[order[0]], ext[order[1]], ext[order[2]]),
    }
}

fn principal_axes(points: &[Vector3<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.max();
    let rank = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOLERANCE * max.max(f64::MIN_POSITIVE)).count();
    if rank < 3 || points.len() < 4 {
        return Err(Error::Degenerate { rank: rank.min(points.len().saturating_sub(1)) });
    }
    Ok(eig.eigenvectors.transpose())
}

fn check_cloud(pc: &PointCloud) -> Result<()> {
    if pc.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::input("point cloud has non-finite coordinates"));
    }
    Ok(())
}

/// Box aligned with the principal axes of the cloud.
pub fn pca_obb(pc: &PointCloud) -> Result<ObbFrame> {
    check_cloud(pc)?;
    let axes = principal_axes(&pc.points)?;
    Ok(obb_from_rotation(&pc.points, &axes))
}

fn subsample(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let step = points.len().div_ceil(SEARCH_SAMPLE).max(1);
    points.iter().step_by(step).copied().collect()
}

fn axis_rotation(axis: usize, angle: f64) -> Matrix3<f64> {
    let unit = match axis {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        _ => Vector3::z_axis(),
    };
    *Rotation3::from_axis_angle(&unit, angle).matrix()
}

/// Coordinate descent over the three box-frame rotation angles, halving the
/// step whenever no single-axis move shrinks the box.
fn descend(points: &[Vector3<f64>], mut r: Matrix3<f64>, mut vol: f64, from_deg: f64, to_deg: f64) -> (Matrix3<f64>, f64) {
    let mut step = from_deg.to_radians();
    let end = to_deg.to_radians();
    while step >= end {
        loop {
            let mut improved = false;
            for axis in 0..3 {
                for sign in [1.0, -1.0] {
                    let cand = axis_rotation(axis, sign * step) * r;
                    let v = aligned_volume(points, &cand);
                    if v < vol {
                        r = cand;
                        vol = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        step *= 0.5;
    }
    (r, vol)
}

/// Approximately minimal-volume oriented box.
///
/// Starts from the principal axes and runs [`COARSE_ROUNDS`] rounds of
/// coordinate descent with steps halving from 10° to 0.15°, then polishes with
/// smaller steps. The search runs on a subsample of large clouds; the result
/// is never larger than the PCA box on the full cloud.
pub fn fit_obb(pc: &PointCloud) -> Result<ObbFrame> {
    check_cloud(pc)?;
    let pca_axes = principal_axes(&pc.points)?;
    let sample = subsample(&pc.points);

    let mut r = pca_axes;
    let mut vol = aligned_volume(&sample, &r);
    for _ in 0..COARSE_ROUNDS {
        (r, vol) = descend(&sample, r, vol, COARSE_START_DEG, COARSE_END_DEG);
    }
    (r, _) = descend(&sample, r, vol, COARSE_END_DEG, POLISH_END_DEG);

    let fitted = obb_from_rotation(&pc.points, &r);
    let pca = obb_from_rotation(&pc.points, &pca_axes);
    Ok(if fitted.volume() <= pca.volume() { fitted } else { pca })
}
