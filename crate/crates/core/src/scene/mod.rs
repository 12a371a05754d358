//! Scene pre-processing: depth maps to a ground-aligned bird's-eye view.
//!
//! The stages run in order: [`backproject_depth`] per frame, [`fit_obb`] on
//! the merged cloud, [`align_to_ground`] to fix the vertical axis and its
//! sign, [`rasterize_bev`], and finally [`camera_to_bev_pose`] for every
//! camera.

mod backproject;
mod bev;
mod ground;
mod obb;

pub use backproject::{backproject_depth, project_point, DepthMap, Intrinsics, PointCloud};
pub use bev::{
    auto_cell_size, camera_to_bev_pose, direction_from_heading, heading_from_direction, rasterize_bev, BevGrid,
    BevPose, BevPoseEstimate, GridMeta, BEV_CHANNELS, MAX_AUTO_CELLS,
};
pub use ground::{
    align_to_ground, estimate_ground_axis, percentile, Alignment, GroundEstimate, GroundSide, GroundTransform,
    MIN_GROUND_SAMPLES,
};
pub use obb::{fit_obb, obb_from_rotation, pca_obb, ObbFrame};
