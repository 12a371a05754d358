//! Keyframe selection and BEV pose grounding for spatial video reasoning.
//!
//! The crate covers the deterministic, model-free part of the pipeline:
//!
//! * [`geometry`]: SE(3) poses, geodesic rotation distance, pose affinity.
//! * [`view_kernel`]: banded viewpoint graph, normalized Laplacian, heat kernel.
//! * [`semantic`]: score calibration and diagonal quality weights.
//! * [`dpp`]: L-ensemble construction and fixed-size greedy / exact MAP.
//! * [`scene`]: depth back-projection, OBB fit, ground alignment, BEV raster.
//! * [`grounding`]: BEV pose similarity and nearest-frame retrieval.
//! * [`episode`]: pose-query episodes, scripted policies, rewards, advantages.
//! * [`config`], [`io`], [`commands`]: configuration, file formats, CLI commands.
//! * [`synth`]: a synthetic room generator with known ground truth.

pub mod commands;
pub mod config;
pub mod dpp;
pub mod episode;
mod error;
pub mod geometry;
pub mod grounding;
pub mod io;
pub mod scene;
pub mod semantic;
pub mod synth;
pub mod view_kernel;

pub use error::{Error, Result};
