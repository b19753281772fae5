//! Virtual LiDAR and camera.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scene::Scene;
use crate::calib::{Correspondence, Image};
use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, project_point, so3_exp, Intrinsics, Mat3, Ray, SE3Pose, Se3Params, Vec2, Vec3};
use crate::geomfit::LidarFrame;

/// Beam layout of the virtual LiDAR, in its own frame (x forward, y left,
/// z up).
#[derive(Clone, Debug, PartialEq)]
pub enum LidarPattern {
    /// Regular azimuth/elevation grid, angles in degrees.
    Spherical {
        n_azimuth: usize,
        n_elevation: usize,
        azimuth: (f64, f64),
        elevation: (f64, f64),
    },
    /// One beam per pixel of a forward-looking pinhole camera.
    Pinhole(Intrinsics),
}

impl Default for LidarPattern {
    fn default() -> Self {
        LidarPattern::Spherical {
            n_azimuth: 64,
            n_elevation: 32,
            azimuth: (-45.0, 45.0),
            elevation: (-28.0, 22.0),
        }
    }
}

fn lerp_range((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

impl LidarPattern {
    pub fn directions(&self) -> Vec<Vec3> {
        match self {
            LidarPattern::Spherical {
                n_azimuth,
                n_elevation,
                azimuth,
                elevation,
            } => {
                let mut out = Vec::with_capacity(n_azimuth * n_elevation);
                for e in 0..*n_elevation {
                    let el = lerp_range(*elevation, e, *n_elevation).to_radians();
                    for a in 0..*n_azimuth {
                        let az = lerp_range(*azimuth, a, *n_azimuth).to_radians();
                        out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
                    }
                }
                out
            }
            LidarPattern::Pinhole(k) => {
                let mut out = Vec::with_capacity(k.pixel_count());
                for y in 0..k.height {
                    for x in 0..k.width {
                        let c = k.backproject(&Vec2::new(x as f64, y as f64));
                        out.push(Vec3::new(c.z, -c.x, -c.y).normalize());
                    }
                }
                out
            }
        }
    }
}

/// Casts every beam from `world_to_lidar` and keeps the hits, adding
/// Gaussian range noise of standard deviation `noise_sigma`.
pub fn scan_lidar(
    scene: &Scene,
    world_to_lidar: &SE3Pose,
    pattern: &LidarPattern,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<LidarFrame> {
    let origin = world_to_lidar.center();
    let rt = world_to_lidar.rotation.transpose();
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut points = Vec::new();
    for dir in pattern.directions() {
        let ray = Ray::new(origin, rt * dir);
        if let Some(hit) = scene.intersect(&ray) {
            let range = if noise_sigma > 0.0 { hit.t + noise.sample(rng) } else { hit.t };
            if range > 0.0 {
                points.push(world_to_lidar.rotation * ray.direction * range);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Empty("LiDAR scan hit nothing".into()));
    }
    LidarFrame::new(points, *world_to_lidar)
}

/// Rotation taking LiDAR axes (x forward, y left, z up) to camera axes
/// (x right, y down, z forward).
pub fn lidar_to_camera_axes() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub frames: usize,
    /// Forward travel per frame (m).
    pub step: f64,
    pub yaw_amplitude_deg: f64,
    pub yaw_period_frames: f64,
    /// Lateral sway amplitude (m).
    pub sway: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            frames: 20,
            step: 0.5,
            yaw_amplitude_deg: 4.0,
            yaw_period_frames: 16.0,
            sway: 0.3,
        }
    }
}

impl TrajectorySpec {
    /// Straight forward motion with no rotation.
    pub fn forward(frames: usize, step: f64) -> Self {
        Self {
            frames,
            step,
            yaw_amplitude_deg: 0.0,
            yaw_period_frames: 1.0,
            sway: 0.0,
        }
    }
}

/// LiDAR poses over time, the ground-truth extrinsic and the camera model.
#[derive(Clone, Debug)]
pub struct RigTrajectory {
    pub lidar_poses: Vec<SE3Pose>,
    /// Ground-truth LiDAR-to-camera transform.
    pub extrinsic: SE3Pose,
    pub intrinsics: Intrinsics,
}

/// A KITTI-like mounting: camera axes, a small misalignment and a lever arm.
pub fn default_extrinsic() -> SE3Pose {
    let tilt = so3_exp(&Vec3::new(0.02, -0.035, 0.01));
    SE3Pose::new(tilt * lidar_to_camera_axes(), Vec3::new(0.06, -0.08, -0.27))
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).expect("valid intrinsics")
}

impl RigTrajectory {
    pub fn new(spec: &TrajectorySpec, extrinsic: SE3Pose, intrinsics: Intrinsics) -> Self {
        let lidar_poses = (0..spec.frames)
            .map(|i| {
                let phase = std::f64::consts::TAU * i as f64 / spec.yaw_period_frames;
                let yaw = spec.yaw_amplitude_deg.to_radians() * phase.sin();
                let body = SE3Pose::new(
                    so3_exp(&Vec3::new(0.0, 0.0, yaw)),
                    Vec3::new(spec.step * i as f64, spec.sway * phase.sin(), 0.0),
                );
                body.inverse()
            })
            .collect();
        Self {
            lidar_poses,
            extrinsic,
            intrinsics,
        }
    }

    pub fn len(&self) -> usize {
        self.lidar_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lidar_poses.is_empty()
    }

    /// World-to-camera pose of frame `i` under a given extrinsic.
    pub fn camera_pose_with(&self, extrinsic: &SE3Pose, i: usize) -> SE3Pose {
        extrinsic.compose(&self.lidar_poses[i])
    }

    pub fn camera_pose(&self, i: usize) -> SE3Pose {
        self.camera_pose_with(&self.extrinsic, i)
    }

    pub fn extrinsic_params(&self) -> Se3Params {
        crate::geometry::se3_log(&self.extrinsic)
    }
}

/// Exactly ray-cast camera image with its z-depth map; misses are black.
#[derive(Clone, Debug)]
pub struct GtView {
    pub image: Image,
    pub depth: Vec<Option<f64>>,
}

pub fn render_gt_camera(scene: &Scene, world_to_cam: &SE3Pose, intr: &Intrinsics) -> GtView {
    let mut image = Image::filled(intr.width, intr.height, Vec3::zeros());
    let mut depth = vec![None; intr.pixel_count()];
    for y in 0..intr.height {
        for x in 0..intr.width {
            let ray = pixel_ray(intr, world_to_cam, &Vec2::new(x as f64, y as f64)).expect("pixel in bounds");
            if let Some(hit) = scene.intersect(&ray) {
                image.set(x, y, hit.color);
                depth[y * intr.width + x] = Some(world_to_cam.transform_point(&hit.point).z);
            }
        }
    }
    GtView { image, depth }
}

/// Ground-truth matches from view `frame` to `frame + 1`: scene points
/// seen at grid pixels of the first view, projected into the second and
/// kept only if that view sees the same point unoccluded.
pub fn gt_correspondences(
    scene: &Scene,
    rig: &RigTrajectory,
    frame: usize,
    stride: usize,
) -> Vec<Correspondence> {
    let intr = &rig.intrinsics;
    let (a, b) = (rig.camera_pose(frame), rig.camera_pose(frame + 1));
    let stride = stride.max(1);
    let mut out = Vec::new();
    for y in (stride / 2..intr.height).step_by(stride) {
        for x in (stride / 2..intr.width).step_by(stride) {
            let q = Vec2::new(x as f64, y as f64);
            let ray = pixel_ray(intr, &a, &q).expect("pixel in bounds");
            let Some(hit) = scene.intersect(&ray) else { continue };
            let Ok((q2, z2)) = project_point(intr, &b, &hit.point) else { continue };
            if z2 <= 0.0 || !intr.contains(&q2) {
                continue;
            }
            let back = pixel_ray(intr, &b, &q2).expect("checked bounds");
            let Some(seen) = scene.intersect(&back) else { continue };
            if (seen.point - hit.point).norm() > 1e-6 {
                continue;
            }
            out.push(Correspondence {
                frame,
                q_n: q,
                q_next: q2,
            });
        }
    }
    out
}
