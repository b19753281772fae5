//! Targetless LiDAR-camera extrinsic calibration on a 2D Gaussian splat scene.
//!
//! The pipeline first fits splat geometry to LiDAR depth ([`geomfit`]), then
//! freezes it and jointly optimizes splat colors and the LiDAR-to-camera
//! transform against camera images ([`calib`]) using photometric,
//! reprojection and triangulation losses. [`synth`] generates scenes with
//! exact ground truth and runs bias sweeps; [`io`] holds the file formats.

pub mod calib;
pub mod error;
pub mod geometry;
pub mod geomfit;
pub mod gradcheck;
pub mod io;
pub mod optim;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Ray, SE3Pose, Se3Params};
