//! Camera poses as differentiable functions of the extrinsic parameters,
//! and accumulation of pose gradients from many rays.

use crate::geometry::{pixel_ray, DiffPose, Intrinsics, Mat3, Ray, SE3Pose, Se3Params, Vec2, Vec3};
use crate::error::Result;
use crate::splat::RayGradient;

/// Camera and relative poses for one extrinsic estimate, with their
/// derivatives along the six extrinsic coordinates.
#[derive(Clone, Debug)]
pub struct PoseState {
    pub extrinsic: DiffPose,
    /// World-to-camera pose of each frame, `extrinsic * lidar_pose`.
    pub cameras: Vec<DiffPose>,
    /// Camera `n` to camera `n + 1`.
    pub relative: Vec<DiffPose>,
    pub lidar_poses: Vec<SE3Pose>,
}

impl PoseState {
    pub fn new(xi: &Se3Params, lidar_poses: &[SE3Pose]) -> Self {
        let extrinsic = DiffPose::exp(xi);
        let inverse = extrinsic.inverse();
        let cameras = lidar_poses.iter().map(|l| extrinsic.then_constant(l)).collect();
        let relative = lidar_poses
            .windows(2)
            .map(|w| {
                let motion = w[1].compose(&w[0].inverse());
                extrinsic.then_constant(&motion).compose(&inverse)
            })
            .collect();
        Self {
            extrinsic,
            cameras,
            relative,
            lidar_poses: lidar_poses.to_vec(),
        }
    }

    pub fn camera(&self, frame: usize) -> &SE3Pose {
        &self.cameras[frame].pose
    }

    /// World-space ray through `pixel` of `frame`, with the unit
    /// camera-frame direction it was built from.
    pub fn pixel_ray(&self, intr: &Intrinsics, frame: usize, pixel: &Vec2) -> Result<(Ray, Vec3)> {
        let ray = pixel_ray(intr, self.camera(frame), pixel)?;
        Ok((ray, intr.backproject(pixel).normalize()))
    }
}

/// Loss gradients with respect to intermediate pose quantities.
#[derive(Clone, Debug)]
pub struct PoseGradient {
    /// Per frame: gradient on the camera-to-world rotation and on the
    /// camera center.
    pub rays: Vec<(Mat3, Vec3)>,
    /// Per frame pair: gradient on the relative rotation and translation.
    pub relative: Vec<(Mat3, Vec3)>,
}

impl PoseGradient {
    pub fn zeros(frames: usize) -> Self {
        Self {
            rays: vec![(Mat3::zeros(), Vec3::zeros()); frames],
            relative: vec![(Mat3::zeros(), Vec3::zeros()); frames.saturating_sub(1)],
        }
    }

    /// Adds the gradient of a ray `origin = center`,
    /// `direction = R_cw^T * dir_cam`.
    pub fn add_ray(&mut self, frame: usize, grad: &RayGradient, dir_cam: &Vec3) {
        let (r, o) = &mut self.rays[frame];
        *r += grad.direction * dir_cam.transpose();
        *o += grad.origin;
    }

    pub fn add_relative(&mut self, pair: usize, g_rotation: &Mat3, g_translation: &Vec3) {
        let (r, t) = &mut self.relative[pair];
        *r += g_rotation;
        *t += g_translation;
    }

    pub fn add(&mut self, other: &PoseGradient) {
        for (a, b) in self.rays.iter_mut().zip(&other.rays) {
            a.0 += b.0;
            a.1 += b.1;
        }
        for (a, b) in self.relative.iter_mut().zip(&other.relative) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.rays.iter_mut().chain(self.relative.iter_mut()) {
            a.0 *= s;
            a.1 *= s;
        }
    }

    /// Chain rule down to the extrinsic coordinates.
    pub fn to_params(&self, state: &PoseState) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (cam, (g_rwc, g_center)) in state.cameras.iter().zip(&self.rays) {
            // camera-to-world rotation R^T and center -R^T t
            let r = &cam.pose.rotation;
            let t = &cam.pose.translation;
            let g_rot = g_rwc.transpose() - t * g_center.transpose();
            let g_trans = -(r * g_center);
            for (o, v) in out.iter_mut().zip(cam.pullback(&g_rot, &g_trans)) {
                *o += v;
            }
        }
        for (rel, (g_rot, g_trans)) in state.relative.iter().zip(&self.relative) {
            for (o, v) in out.iter_mut().zip(rel.pullback(g_rot, g_trans)) {
                *o += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;

    fn lidar_poses() -> Vec<SE3Pose> {
        (0..3)
            .map(|i| se3_exp(&Se3Params::from_array([0.1 * i as f64, -0.4 * i as f64, 0.05, 0.0, 0.0, 0.03 * i as f64])))
            .collect()
    }

    #[test]
    fn relative_pose_maps_between_cameras() {
        let xi = Se3Params::from_array([0.1, -0.2, 0.3, 0.5, -1.2, 0.4]);
        let st = PoseState::new(&xi, &lidar_poses());
        let p = Vec3::new(1.0, 2.0, 7.0);
        let in0 = st.camera(0).transform_point(&p);
        let in1 = st.camera(1).transform_point(&p);
        assert!((st.relative[0].pose.transform_point(&in0) - in1).norm() < 1e-12);
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        // f = <A, R_wc> + <b, center> for frame 1 plus <C, R'> + <d, t'>
        let a = Mat3::new(0.3, -0.1, 0.7, 0.2, 0.5, -0.4, 0.9, 0.1, -0.6);
        let b = Vec3::new(0.4, -0.8, 0.2);
        let c = Mat3::new(-0.2, 0.6, 0.1, 0.3, -0.5, 0.8, 0.05, 0.4, 0.2);
        let d = Vec3::new(-0.3, 0.1, 0.7);
        let poses = lidar_poses();
        let f = |x: [f64; 6]| {
            let st = PoseState::new(&Se3Params::from_array(x), &poses);
            let cam = st.camera(1);
            a.component_mul(&cam.rotation.transpose()).sum()
                + b.dot(&cam.center())
                + c.component_mul(&st.relative[1].pose.rotation).sum()
                + d.dot(&st.relative[1].pose.translation)
        };
        let x0 = [0.1, -0.2, 0.3, 0.5, -1.2, 0.4];
        let st = PoseState::new(&Se3Params::from_array(x0), &poses);
        let mut g = PoseGradient::zeros(3);
        g.rays[1] = (a, b);
        g.relative[1] = (c, d);
        let analytic = g.to_params(&st);
        for k in 0..6 {
            let (mut p, mut m) = (x0, x0);
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (f(p) - f(m)) / 2e-6;
            assert!((fd - analytic[k]).abs() < 1e-7, "{k}: {fd} vs {}", analytic[k]);
        }
    }
}
