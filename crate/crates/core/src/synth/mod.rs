//! Synthetic scenes, virtual sensors and experiment sweeps.

mod experiment;
mod scene;
mod sensors;

pub use experiment::{
    axis_errors, lidar_overlay, run_biases, run_experiment, Dataset, DatasetSpec, ExperimentReport, ExperimentSpec,
    RunRecord, SuccessThresholds,
};
pub use scene::{make_scene, Scene, SceneHit, ScenePreset, Surface, Texture};
pub use sensors::{
    default_extrinsic, default_intrinsics, gt_correspondences, lidar_to_camera_axes, render_gt_camera, scan_lidar,
    GtView, LidarPattern, RigTrajectory, TrajectorySpec,
};
