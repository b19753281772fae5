//! Rigid transforms and their Lie algebra.
//!
//! A pose maps coordinates of a parent frame into its own frame. Sensor poses
//! map world points into the sensor, so a camera pose composes from a LiDAR
//! pose and the LiDAR-to-camera extrinsic as `extrinsic * lidar_pose`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::jet::{Jet, Real};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this rotation angle the exponential map switches to series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotations whose `R^T R - I` Frobenius norm exceeds this are re-projected.
pub const ORTHONORMAL_DRIFT: f64 = 1e-9;

/// se(3) coordinates, translational part first.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Se3Params {
    pub rho: Vec3,
    pub phi: Vec3,
}

impl Se3Params {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            rho: Vec3::new(a[0], a[1], a[2]),
            phi: Vec3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Add for Se3Params {
    type Output = Se3Params;
    fn add(self, o: Se3Params) -> Se3Params {
        Se3Params::new(self.rho + o.rho, self.phi + o.phi)
    }
}

impl Sub for Se3Params {
    type Output = Se3Params;
    fn sub(self, o: Se3Params) -> Se3Params {
        Se3Params::new(self.rho - o.rho, self.phi - o.phi)
    }
}

impl fmt::Display for Se3Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(
            f,
            "rho=({:.6}, {:.6}, {:.6}) phi=({:.6}, {:.6}, {:.6})",
            a[0], a[1], a[2], a[3], a[4], a[5]
        )
    }
}

/// A rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn from_rotation(r: Mat3) -> Self {
        Self::new(r, Vec3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Origin of this frame expressed in the parent frame.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Projects the rotation onto SO(3) (polar decomposition).
    pub fn reorthonormalized(&self) -> Self {
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        let mut out = SE3Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        );
        if out.orthonormality_error() > ORTHONORMAL_DRIFT {
            out = out.reorthonormalized();
        }
        out
    }
}

impl Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, o: SE3Pose) -> SE3Pose {
        self.compose(&o)
    }
}

impl Mul for &SE3Pose {
    type Output = SE3Pose;
    fn mul(self, o: &SE3Pose) -> SE3Pose {
        self.compose(o)
    }
}

/// Closest rotation in Frobenius norm, `U V^T` from the SVD.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

type M3<S> = [[S; 3]; 3];

/// Exponential map written against [`Real`] so that it can be evaluated on
/// dual numbers. Returns the row-major rotation and the translation.
pub fn se3_exp_generic<S: Real>(xi: &[S; 6]) -> (M3<S>, [S; 3]) {
    let zero = S::constant(0.0);
    let one = S::constant(1.0);
    let [r0, r1, r2, w0, w1, w2] = *xi;
    let theta2 = w0 * w0 + w1 * w1 + w2 * w2;

    // R = I + a W + b W^2 and V = I + b W + c W^2.
    let (a, b, c) = if theta2.value().sqrt() < SMALL_ANGLE {
        (
            one - theta2 / S::constant(6.0),
            S::constant(0.5) - theta2 / S::constant(24.0),
            S::constant(1.0 / 6.0) - theta2 / S::constant(120.0),
        )
    } else {
        let theta = theta2.sqrt();
        let s = theta.sin();
        let half = (theta * S::constant(0.5)).sin();
        (
            s / theta,
            S::constant(2.0) * half * half / theta2,
            (theta - s) / (theta2 * theta),
        )
    };

    let w: M3<S> = [[zero, -w2, w1], [w2, zero, -w0], [-w1, w0, zero]];
    let mut w2m: M3<S> = [[zero; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            w2m[i][j] = w[i][0] * w[0][j] + w[i][1] * w[1][j] + w[i][2] * w[2][j];
        }
    }

    let mut r: M3<S> = [[zero; 3]; 3];
    let mut v: M3<S> = [[zero; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { one } else { zero };
            r[i][j] = id + a * w[i][j] + b * w2m[i][j];
            v[i][j] = id + b * w[i][j] + c * w2m[i][j];
        }
    }
    let rho = [r0, r1, r2];
    let mut t = [zero; 3];
    for i in 0..3 {
        t[i] = v[i][0] * rho[0] + v[i][1] * rho[1] + v[i][2] * rho[2];
    }
    (r, t)
}

pub fn se3_exp(xi: &Se3Params) -> SE3Pose {
    let (r, t) = se3_exp_generic(&xi.to_array());
    SE3Pose::new(
        Mat3::from_fn(|i, j| r[i][j]),
        Vec3::new(t[0], t[1], t[2]),
    )
}

pub fn so3_exp(phi: &Vec3) -> Mat3 {
    se3_exp(&Se3Params::new(Vec3::zeros(), *phi)).rotation
}

/// Which formula the rotation logarithm used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogBranch {
    SmallAngle,
    Regular,
    /// Rotation angle at (or numerically next to) pi, solved from the
    /// symmetric part of `R`.
    NearPi,
}

pub fn so3_log_with_branch(r: &Mat3) -> (Vec3, LogBranch) {
    let skew = vee(&(r - r.transpose())) * 0.5; // sin(theta) * axis
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // sin(theta)/theta ~ 1 - theta^2/6
        return (skew * (1.0 + theta * theta / 6.0), LogBranch::SmallAngle);
    }
    if sin_theta > 1e-4 || cos_theta > 0.0 {
        return (skew * (theta / sin_theta), LogBranch::Regular);
    }

    // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) n n^T
    let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let k = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap();
    let mut axis: Vec3 = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    (axis * theta, LogBranch::NearPi)
}

pub fn so3_log(r: &Mat3) -> Vec3 {
    so3_log_with_branch(r).0
}

/// Inverse of the left Jacobian `V` applied to `t`.
fn v_inverse_times(phi: &Vec3, t: &Vec3) -> Vec3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / theta2
    };
    t - w * t * 0.5 + w * w * t * coeff
}

pub fn se3_log_with_branch(pose: &SE3Pose) -> (Se3Params, LogBranch) {
    let (phi, branch) = so3_log_with_branch(&pose.rotation);
    let rho = v_inverse_times(&phi, &pose.translation);
    (Se3Params::new(rho, phi), branch)
}

pub fn se3_log(pose: &SE3Pose) -> Se3Params {
    let (xi, branch) = se3_log_with_branch(pose);
    if branch != LogBranch::Regular {
        log::debug!("se3_log: {branch:?} branch");
    }
    xi
}

/// Pose with its derivative along each of the six se(3) coordinates it was
/// produced from.
#[derive(Clone, Debug)]
pub struct DiffPose {
    pub pose: SE3Pose,
    pub d_rotation: [Mat3; 6],
    pub d_translation: [Vec3; 6],
}

impl DiffPose {
    pub fn constant(pose: SE3Pose) -> Self {
        Self {
            pose,
            d_rotation: [Mat3::zeros(); 6],
            d_translation: [Vec3::zeros(); 6],
        }
    }

    /// `exp(xi)` together with `d exp(xi) / d xi_j`.
    pub fn exp(xi: &Se3Params) -> Self {
        let a = xi.to_array();
        let jets: [Jet<6>; 6] = std::array::from_fn(|i| Jet::variable(a[i], i));
        let (r, t) = se3_exp_generic(&jets);
        Self {
            pose: SE3Pose::new(
                Mat3::from_fn(|i, j| r[i][j].v),
                Vec3::new(t[0].v, t[1].v, t[2].v),
            ),
            d_rotation: std::array::from_fn(|k| Mat3::from_fn(|i, j| r[i][j].d[k])),
            d_translation: std::array::from_fn(|k| Vec3::new(t[0].d[k], t[1].d[k], t[2].d[k])),
        }
    }

    /// `self * rhs` with `rhs` held constant.
    pub fn then_constant(&self, rhs: &SE3Pose) -> Self {
        Self {
            pose: SE3Pose::new(
                self.pose.rotation * rhs.rotation,
                self.pose.rotation * rhs.translation + self.pose.translation,
            ),
            d_rotation: std::array::from_fn(|k| self.d_rotation[k] * rhs.rotation),
            d_translation: std::array::from_fn(|k| {
                self.d_rotation[k] * rhs.translation + self.d_translation[k]
            }),
        }
    }

    pub fn compose(&self, rhs: &DiffPose) -> Self {
        let (ra, ta) = (&self.pose.rotation, &self.pose.translation);
        let (rb, tb) = (&rhs.pose.rotation, &rhs.pose.translation);
        Self {
            pose: SE3Pose::new(ra * rb, ra * tb + ta),
            d_rotation: std::array::from_fn(|k| {
                self.d_rotation[k] * rb + ra * rhs.d_rotation[k]
            }),
            d_translation: std::array::from_fn(|k| {
                self.d_rotation[k] * tb + ra * rhs.d_translation[k] + self.d_translation[k]
            }),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.pose.rotation.transpose();
        let t = self.pose.translation;
        Self {
            pose: SE3Pose::new(rt, -(rt * t)),
            d_rotation: std::array::from_fn(|k| self.d_rotation[k].transpose()),
            d_translation: std::array::from_fn(|k| {
                -(self.d_rotation[k].transpose() * t) - rt * self.d_translation[k]
            }),
        }
    }

    /// Contracts gradients with respect to the rotation and translation
    /// entries into a gradient over the six coordinates.
    pub fn pullback(&self, g_rotation: &Mat3, g_translation: &Vec3) -> [f64; 6] {
        std::array::from_fn(|k| {
            self.d_rotation[k].component_mul(g_rotation).sum()
                + self.d_translation[k].dot(g_translation)
        })
    }
}

/// Sets the extrinsic to `exp(xi_true + bias)`, adding in parameter space.
pub fn apply_bias(xi_true: &Se3Params, bias: &Se3Params) -> SE3Pose {
    se3_exp(&(*xi_true + *bias))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub rot_deg: f64,
    pub trans_m: f64,
}

/// Rotation error as the rotation-vector magnitude of `R_est R_gt^T` in
/// degrees, translation error as the Euclidean distance of the translations.
pub fn pose_error(est: &SE3Pose, gt: &SE3Pose) -> PoseError {
    let dr = est.rotation * gt.rotation.transpose();
    PoseError {
        rot_deg: so3_log(&dr).norm().to_degrees(),
        trans_m: (est.translation - gt.translation).norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn max_entry_diff(a: &SE3Pose, b: &SE3Pose) -> f64 {
        (a.rotation - b.rotation)
            .abs()
            .max()
            .max((a.translation - b.translation).abs().max())
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(se3_exp(&Se3Params::zero()), SE3Pose::identity());
    }

    #[test]
    fn exp_of_pure_translation() {
        let p = se3_exp(&Se3Params::from_array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.rotation, Mat3::identity());
        assert_eq!(p.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let p = se3_exp(&Se3Params::from_array([0.0, 0.0, 0.0, FRAC_PI_2, 0.0, 0.0]));
        let expected = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((p.rotation - expected).abs().max() < 1e-15);
        assert_eq!(p.translation, Vec3::zeros());
    }

    #[test]
    fn log_identity_and_translation() {
        assert_eq!(se3_log(&SE3Pose::identity()), Se3Params::zero());
        let xi = se3_log(&SE3Pose::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(xi, Se3Params::from_array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn log_at_exactly_pi_uses_symmetric_branch() {
        let r = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let (phi, branch) = so3_log_with_branch(&r);
        assert_eq!(branch, LogBranch::NearPi);
        assert!((phi.norm() - PI).abs() < 1e-12);
        assert!((so3_exp(&phi) - r).abs().max() < 1e-12);

        let pose = SE3Pose::new(r, Vec3::new(0.3, -1.0, 2.0));
        assert!(max_entry_diff(&se3_exp(&se3_log(&pose)), &pose) < 1e-10);
    }

    #[test]
    fn log_near_pi() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        for eps in [1e-3, 1e-5, 1e-7, 1e-9] {
            let phi = axis * (PI - eps);
            let r = so3_exp(&phi);
            assert!((so3_exp(&so3_log(&r)) - r).abs().max() < 1e-10, "eps={eps}");
        }
    }

    #[test]
    fn small_angle_exp_log() {
        let xi = Se3Params::from_array([0.1, -0.2, 0.3, 1e-10, -2e-10, 3e-10]);
        let back = se3_log(&se3_exp(&xi));
        assert!((back.phi - xi.phi).norm() < 1e-20);
        assert!((back.rho - xi.rho).norm() < 1e-14);
    }

    #[test]
    fn roundtrip_1000_random_poses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let axis = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let angle = rng.gen_range(0.0..PI);
            let t = Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let pose = SE3Pose::new(so3_exp(&(axis * angle)), t);
            worst = worst.max(max_entry_diff(&se3_exp(&se3_log(&pose)), &pose));
        }
        assert!(worst < 1e-10, "worst entry error {worst:e}");
    }

    #[test]
    fn bias_protocols() {
        let gt = se3_exp(&Se3Params::zero());
        let near = apply_bias(
            &Se3Params::zero(),
            &Se3Params::from_array([0.1, 0.1, 0.1, 0.0, 0.0, 0.0]),
        );
        let e = pose_error(&near, &gt);
        assert!((e.trans_m - 0.1 * 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.rot_deg, 0.0);

        let far = apply_bias(&Se3Params::zero(), &Se3Params::from_array([0.2; 6]));
        let e = pose_error(&far, &gt);
        assert!((e.rot_deg - (0.2 * 3f64.sqrt()).to_degrees()).abs() < 1e-9);
        assert!((e.rot_deg - 19.8479).abs() < 1e-4);

        let xi = Se3Params::from_array([0.5, 0.1, -0.3, 0.2, 0.1, 0.4]);
        assert_eq!(apply_bias(&xi, &Se3Params::zero()), se3_exp(&xi));
    }

    #[test]
    fn pose_error_cases() {
        let gt = se3_exp(&Se3Params::from_array([0.4, -0.1, 2.0, 0.3, -0.7, 1.1]));
        let e = pose_error(&gt, &gt);
        assert_eq!((e.rot_deg, e.trans_m), (0.0, 0.0));

        let yaw = so3_exp(&Vec3::new(0.0, 0.0, 1f64.to_radians()));
        let est = SE3Pose::new(yaw * gt.rotation, gt.translation);
        let e = pose_error(&est, &gt);
        assert!((e.rot_deg - 1.0).abs() < 1e-9);
        assert_eq!(e.trans_m, 0.0);

        let est = SE3Pose::new(gt.rotation, gt.translation + Vec3::new(0.05, 0.0, 0.0));
        let e = pose_error(&est, &gt);
        assert!(e.rot_deg.abs() < 1e-12);
        assert!((e.trans_m - 0.05).abs() < 1e-15);
    }

    #[test]
    fn repeated_composition_stays_orthonormal() {
        let step = se3_exp(&Se3Params::from_array([0.01, 0.0, 0.02, 0.013, -0.007, 0.021]));
        let mut acc = SE3Pose::identity();
        for _ in 0..100_000 {
            acc = acc * step;
        }
        assert!(acc.orthonormality_error() <= ORTHONORMAL_DRIFT);
        assert!((acc.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diff_pose_matches_finite_differences() {
        let xi = Se3Params::from_array([0.3, -0.2, 1.0, 0.5, -1.2, 0.8]);
        let lidar = se3_exp(&Se3Params::from_array([1.0, 2.0, -0.5, 0.1, 0.2, -0.3]));
        let chain = DiffPose::exp(&xi).then_constant(&lidar);
        let rel = chain.compose(&DiffPose::constant(lidar.inverse())).compose(&chain.inverse());
        let h = 1e-6;
        for k in 0..6 {
            let mut a = xi.to_array();
            let mut b = a;
            a[k] += h;
            b[k] -= h;
            let f = |x: [f64; 6]| {
                let p = se3_exp(&Se3Params::from_array(x)) * lidar;
                p * lidar.inverse() * p.inverse()
            };
            let (pa, pb) = (f(a), f(b));
            let fd_r = (pa.rotation - pb.rotation) / (2.0 * h);
            let fd_t = (pa.translation - pb.translation) / (2.0 * h);
            assert!((fd_r - rel.d_rotation[k]).abs().max() < 1e-8);
            assert!((fd_t - rel.d_translation[k]).abs().max() < 1e-8);
        }
    }

    #[test]
    fn diff_pose_at_zero_rotation() {
        let d = DiffPose::exp(&Se3Params::zero());
        // d exp / d phi_x at the origin is hat(e_x)
        assert!((d.d_rotation[3] - hat(&Vec3::x())).abs().max() < 1e-15);
        assert!((d.d_translation[0] - Vec3::x()).abs().max() < 1e-15);
    }

    proptest! {
        #[test]
        fn pure_rotation_bias_error_equals_angle(
            x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5
        ) {
            let phi = Vec3::new(x, y, z);
            prop_assume!(phi.norm() < PI - 1e-3);
            let biased = apply_bias(&Se3Params::zero(), &Se3Params::new(Vec3::zeros(), phi));
            let e = pose_error(&biased, &SE3Pose::identity());
            prop_assert!((e.rot_deg - phi.norm().to_degrees()).abs() < 1e-9);
        }
    }
}
