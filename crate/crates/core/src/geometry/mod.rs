//! Rigid-body algebra, the pinhole camera and pose error metrics.

pub mod camera;
pub mod jet;
pub mod se3;

pub use camera::{pixel_ray, project_point, Intrinsics, Ray, Vec2, SINGULAR_DEPTH};
pub use se3::{
    apply_bias, nearest_rotation, pose_error, se3_exp, se3_log, so3_exp, so3_log, DiffPose, Mat3, PoseError,
    SE3Pose, Se3Params, Vec3,
};
