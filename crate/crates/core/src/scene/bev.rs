use serde::{Deserialize, Serialize};

use super::{GroundTransform, PointCloud};
use crate::geometry::Pose;
use crate::{Error, Result};

/// Channels per cell: occupancy count, min z, max z, mean z.
pub const BEV_CHANNELS: usize = 4;

/// Larger grid side produced by [`auto_cell_size`].
pub const MAX_AUTO_CELLS: usize = 256;

const FALLBACK_CELL_SIZE: f64 = 0.05;
const DEGENERATE_HEADING_NORM: f64 = 1e-6;

/// Placement of the grid on the aligned ground plane. Cell `(ix, iy)` covers
/// `origin + [ix, ix+1)·cell_size × [iy, iy+1)·cell_size`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl GridMeta {
    /// Continuous cell coordinates of an aligned-frame point.
    pub fn to_cell(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin[0]) / self.cell_size, (y - self.origin[1]) / self.cell_size)
    }
}

/// Rasterized height statistics. `data` is row-major over `(iy, ix)` with the
/// four channels interleaved per cell; empty cells hold NaN heights.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub meta: GridMeta,
    pub data: Vec<f32>,
}

impl BevGrid {
    fn cell(&self, ix: usize, iy: usize) -> &[f32] {
        let base = (iy * self.meta.width + ix) * BEV_CHANNELS;
        &self.data[base..base + BEV_CHANNELS]
    }

    pub fn occupancy(&self, ix: usize, iy: usize) -> u32 {
        self.cell(ix, iy)[0] as u32
    }

    /// `(min, max, mean)` height, or `None` for an empty cell.
    pub fn heights(&self, ix: usize, iy: usize) -> Option<(f32, f32, f32)> {
        let c = self.cell(ix, iy);
        (c[0] > 0.0).then_some((c[1], c[2], c[3]))
    }

    pub fn total_occupancy(&self) -> u64 {
        self.data.chunks_exact(BEV_CHANNELS).map(|c| c[0] as u64).sum()
    }
}

fn xy_bounds(cloud: &PointCloud) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &cloud.points {
        lo[0] = lo[0].min(p.x);
        lo[1] = lo[1].min(p.y);
        hi[0] = hi[0].max(p.x);
        hi[1] = hi[1].max(p.y);
    }
    (lo, hi)
}

/// Cell size that keeps the larger grid side at most [`MAX_AUTO_CELLS`].
pub fn auto_cell_size(cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::input("cannot size a grid for an empty cloud"));
    }
    let (lo, hi) = xy_bounds(cloud);
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    Ok(if span > 0.0 { span / (MAX_AUTO_CELLS - 1) as f64 } else { FALLBACK_CELL_SIZE })
}

/// Bins aligned points by `floor((p − origin) / cell_size)`; a point on a
/// cell border belongs to the higher-index cell.
pub fn rasterize_bev(aligned: &PointCloud, cell_size: f64) -> Result<BevGrid> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::input(format!("cell size must be > 0, got {cell_size}")));
    }
    if aligned.is_empty() {
        return Err(Error::input("cannot rasterize an empty cloud"));
    }
    let (lo, hi) = xy_bounds(aligned);
    let width = ((hi[0] - lo[0]) / cell_size).floor() as usize + 1;
    let height = ((hi[1] - lo[1]) / cell_size).floor() as usize + 1;
    let meta = GridMeta {
        cell_size,
        origin: lo,
        width,
        height,
    };

    let cells = width * height;
    let mut count = vec![0u32; cells];
    let mut zmin = vec![f64::INFINITY; cells];
    let mut zmax = vec![f64::NEG_INFINITY; cells];
    let mut zsum = vec![0.0f64; cells];
    for p in &aligned.points {
        let (cx, cy) = meta.to_cell(p.x, p.y);
        let ix = (cx.floor() as usize).min(width - 1);
        let iy = (cy.floor() as usize).min(height - 1);
        let c = iy * width + ix;
        count[c] += 1;
        zmin[c] = zmin[c].min(p.z);
        zmax[c] = zmax[c].max(p.z);
        zsum[c] += p.z;
    }

    let mut data = Vec::with_capacity(cells * BEV_CHANNELS);
    for c in 0..cells {
        if count[c] == 0 {
            data.extend([0.0, f32::NAN, f32::NAN, f32::NAN]);
        } else {
            let mean = (zsum[c] / count[c] as f64).clamp(zmin[c], zmax[c]);
            data.extend([count[c] as f32, zmin[c] as f32, zmax[c] as f32, mean as f32]);
        }
    }
    Ok(BevGrid { meta, data })
}

/// Pose on the BEV plane: cell coordinates and heading in degrees.
///
/// Heading `r` faces `(−sin r, −cos r)` in cell coordinates (x right, y down):
/// 0 is up, 90 left, 180 down, 270 right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevPose {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl BevPose {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r: normalize_heading(r) }
    }
}

pub(crate) fn normalize_heading(r: f64) -> f64 {
    let h = r.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Heading of a planar direction, or `None` if the direction is too short
/// to define one.
pub fn heading_from_direction(dx: f64, dy: f64) -> Option<f64> {
    if dx.hypot(dy) < DEGENERATE_HEADING_NORM {
        return None;
    }
    Some(normalize_heading((-dx).atan2(-dy).to_degrees()))
}

pub fn direction_from_heading(r: f64) -> (f64, f64) {
    let rad = r.to_radians();
    (-rad.sin(), -rad.cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevPoseEstimate {
    pub pose: BevPose,
    /// Camera looked (almost) straight up or down; heading set to 0.
    pub degenerate_heading: bool,
}

/// Projects a camera's centre and optical axis onto the BEV grid.
pub fn camera_to_bev_pose(pose: &Pose, ground: &GroundTransform, grid: &GridMeta) -> BevPoseEstimate {
    let center = ground.apply(&pose.camera_center());
    let forward = ground.apply_direction(&pose.forward_axis());
    let (x, y) = grid.to_cell(center.x, center.y);
    let heading = heading_from_direction(forward.x, forward.y);
    BevPoseEstimate {
        pose: BevPose { x, y, r: heading.unwrap_or(0.0) },
        degenerate_heading: heading.is_none(),
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn single_cell_aggregation() {
        let pc = PointCloud::new(vec![
            Vector3::new(0.1, 0.1, 1.0),
            Vector3::new(0.2, 0.3, 2.0),
            Vector3::new(0.4, 0.2, 3.0),
        ]);
        let g = rasterize_bev(&pc, 1.0).unwrap();
        assert_eq!((g.meta.width, g.meta.height), (1, 1));
        assert_eq!(g.occupancy(0, 0), 3);
        assert_eq!(g.heights(0, 0), Some((1.0, 3.0, 2.0)));
    }

    #[test]
    fn single_point_grid() {
        let g = rasterize_bev(&PointCloud::new(vec![Vector3::new(5.0, -2.0, 0.3)]), 0.5).unwrap();
        assert_eq!((g.meta.width, g.meta.height), (1, 1));
        assert_eq!(g.meta.origin, [5.0, -2.0]);
        assert_eq!(g.occupancy(0, 0), 1);
    }

    #[test]
    fn border_points_go_to_higher_cell() {
        let pc = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.5, 1.0)]);
        let g = rasterize_bev(&pc, 1.0).unwrap();
        assert_eq!((g.meta.width, g.meta.height), (3, 1));
        assert_eq!([g.occupancy(0, 0), g.occupancy(1, 0), g.occupancy(2, 0)], [1, 1, 1]);
    }

    #[test]
    fn empty_cells_are_marked() {
        let pc = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.5, 0.0, 0.0)]);
        let g = rasterize_bev(&pc, 1.0).unwrap();
        assert_eq!(g.occupancy(1, 0), 0);
        assert_eq!(g.heights(1, 0), None);
        assert!(g.cell(1, 0)[1].is_nan());
    }

    #[test]
    fn rasterize_errors() {
        assert!(rasterize_bev(&PointCloud::default(), 1.0).is_err());
        assert!(rasterize_bev(&PointCloud::new(vec![Vector3::zeros()]), 0.0).is_err());
    }

    #[test]
    fn auto_cell_size_caps_grid() {
        let pc = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(12.3, 4.0, 0.0)]);
        let cs = auto_cell_size(&pc).unwrap();
        let g = rasterize_bev(&pc, cs).unwrap();
        assert!(g.meta.width <= MAX_AUTO_CELLS && g.meta.height <= MAX_AUTO_CELLS);
        assert_eq!(auto_cell_size(&PointCloud::new(vec![Vector3::zeros()])).unwrap(), FALLBACK_CELL_SIZE);
    }

    #[test]
    fn heading_table() {
        assert_eq!(heading_from_direction(0.0, -1.0), Some(0.0));
        assert_eq!(heading_from_direction(-1.0, 0.0), Some(90.0));
        assert_eq!(heading_from_direction(0.0, 1.0), Some(180.0));
        assert_eq!(heading_from_direction(1.0, 0.0), Some(270.0));
        assert_eq!(heading_from_direction(0.0, 0.0), None);
    }

    #[test]
    fn camera_projection() {
        // Ground frame = world, camera 1.5 m up looking along +y (cell "down").
        let look = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, 0.0, -1.0, //
            0.0, 1.0, 0.0,
        ));
        let center = Vector3::new(2.0, 3.0, 1.5);
        let pose = Pose::from_rotation(0, look, -(look * center));
        assert!((pose.forward_axis() - Vector3::y()).norm() < 1e-12);
        let grid = GridMeta { cell_size: 0.5, origin: [0.0, 1.0], width: 10, height: 10 };
        let est = camera_to_bev_pose(&pose, &GroundTransform::identity(), &grid);
        assert!(!est.degenerate_heading);
        assert!((est.pose.x - 4.0).abs() < 1e-12 && (est.pose.y - 4.0).abs() < 1e-12);
        assert!((est.pose.r - 180.0).abs() < 1e-9);

        let down = Pose::identity(1);
        let est = camera_to_bev_pose(&down, &GroundTransform::identity(), &grid);
        assert!(est.degenerate_heading);
        assert_eq!(est.pose.r, 0.0);
    }

    proptest! {
        #[test]
        fn mass_is_conserved(pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..300), cs in 0.05f64..3.0) {
            let pc = PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect());
            let g = rasterize_bev(&pc, cs).unwrap();
            prop_assert_eq!(g.total_occupancy(), pts.len() as u64);
            for c in g.data.chunks_exact(BEV_CHANNELS) {
                if c[0] > 0.0 {
                    prop_assert!(c[1] <= c[3] && c[3] <= c[2]);
                }
            }
        }

        #[test]
        fn heading_direction_bijection(r in 0.0f64..360.0) {
            let (dx, dy) = direction_from_heading(r);
            let back = heading_from_direction(dx, dy).unwrap();
            let diff = (back - r).abs();
            prop_assert!(diff < 1e-9 || (360.0 - diff) < 1e-9);
            prop_assert!((0.0..360.0).contains(&back));
        }
    }
}
