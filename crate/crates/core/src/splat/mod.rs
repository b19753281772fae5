//! 2D Gaussian splats: storage, activations, ray compositing and its
//! analytic backward pass.

mod composite;
mod format;
mod grid;
mod render;

pub use composite::{
    composite, composite_ray, ray_splat_intersect, splat_alpha, DepthMode, Hit, HitGradient, RayGradient,
    RaySample, RayUpstream, ndc_depth, ALPHA_SKIP, COVERAGE_MIN, CUTOFF_SQ, DISTORTION_FAR, DISTORTION_NEAR, NEAR_CLIP,
    PARALLEL_EPS, TRANSMITTANCE_STOP,
};
pub use format::{read_field, read_field_from, write_field, write_field_to, MAGIC, VERSION};
pub use grid::SplatGrid;
pub use render::{render_view, RenderedView};

use nalgebra::{Rotation3, UnitQuaternion};

use crate::geometry::{Mat3, Vec3};

/// Offsets of each group inside the flat raw-parameter vector of a splat.
pub mod param {
    pub const CENTER: usize = 0;
    pub const ROTATION: usize = 3;
    pub const LOG_SCALE: usize = 7;
    pub const OPACITY: usize = 9;
    pub const COLOR: usize = 10;
    pub const UNCERTAINTY: usize = 13;
    pub const COUNT: usize = 14;
}

pub type RawParams = [f64; param::COUNT];

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// One planar Gaussian. Geometry is stored unconstrained: the orientation
/// as a (not necessarily unit) quaternion `w, x, y, z` whose rotation
/// matrix has columns `(l_u, l_v, n)`, scales as logarithms, opacity as a
/// logit and the depth uncertainty through a softplus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub center: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    pub color: Vec3,
    pub unc_raw: f64,
}

impl Splat2D {
    /// Builds a splat lying in the plane with the given normal. The first
    /// tangent is the projection of `tangent_hint` onto that plane (any
    /// perpendicular axis if the hint is parallel to the normal).
    pub fn oriented(
        center: Vec3,
        normal: &Vec3,
        tangent_hint: &Vec3,
        scales: [f64; 2],
        opacity: f64,
        uncertainty: f64,
    ) -> Self {
        let n = normal.normalize();
        let mut lu = tangent_hint - n * n.dot(tangent_hint);
        if lu.norm() < 1e-6 {
            let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            lu = axis - n * n.dot(&axis);
        }
        let lu = lu.normalize();
        let lv = n.cross(&lu);
        let frame = Mat3::from_columns(&[lu, lv, n]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(frame));
        Self {
            center,
            rotation: [q.w, q.i, q.j, q.k],
            log_scale: [scales[0].ln(), scales[1].ln()],
            opacity_logit: logit(opacity),
            color: Vec3::repeat(0.5),
            unc_raw: softplus_inverse(uncertainty),
        }
    }

    pub fn to_raw(&self) -> RawParams {
        let mut r = [0.0; param::COUNT];
        r[0..3].copy_from_slice(self.center.as_slice());
        r[3..7].copy_from_slice(&self.rotation);
        r[7..9].copy_from_slice(&self.log_scale);
        r[9] = self.opacity_logit;
        r[10..13].copy_from_slice(self.color.as_slice());
        r[13] = self.unc_raw;
        r
    }

    pub fn from_raw(r: &RawParams) -> Self {
        Self {
            center: Vec3::new(r[0], r[1], r[2]),
            rotation: [r[3], r[4], r[5], r[6]],
            log_scale: [r[7], r[8]],
            opacity_logit: r[9],
            color: Vec3::new(r[10], r[11], r[12]),
            unc_raw: r[13],
        }
    }

    /// Rotation matrix with columns `(l_u, l_v, n)`.
    pub fn frame(&self) -> Mat3 {
        quaternion_matrix(&normalized_quaternion(&self.rotation).0)
    }

    pub fn tangent_u(&self) -> Vec3 {
        self.frame().column(0).into_owned()
    }

    pub fn tangent_v(&self) -> Vec3 {
        self.frame().column(1).into_owned()
    }

    pub fn normal(&self) -> Vec3 {
        self.frame().column(2).into_owned()
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn uncertainty(&self) -> f64 {
        softplus(self.unc_raw)
    }

    /// Geometric parameters: everything except the color.
    pub fn geometry_raw(&self) -> [f64; 11] {
        let r = self.to_raw();
        let mut g = [0.0; 11];
        g[..10].copy_from_slice(&r[..10]);
        g[10] = r[13];
        g
    }

    pub fn clamp_color(&mut self) {
        for c in self.color.iter_mut() {
            *c = c.clamp(0.0, 1.0);
        }
    }
}

pub(crate) fn normalized_quaternion(q: &[f64; 4]) -> ([f64; 4], f64) {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    (q.map(|v| v / norm), norm)
}

pub(crate) fn quaternion_matrix(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back onto the raw quaternion.
pub(crate) fn quaternion_backward(q_hat: &[f64; 4], norm: f64, g: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = *q_hat;
    let dot = |m: [f64; 9]| -> f64 { (0..9).map(|i| m[i] * g[(i / 3, i % 3)]).sum() };
    let gw = dot([0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0]);
    let gx = dot([0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x]);
    let gy = dot([-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y]);
    let gz = dot([-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0]);
    let gq = [gw, gx, gy, gz];
    let radial: f64 = (0..4).map(|i| gq[i] * q_hat[i]).sum();
    std::array::from_fn(|i| (gq[i] - radial * q_hat[i]) / norm)
}

/// Activated per-splat quantities cached for rendering.
#[derive(Clone, Copy, Debug)]
pub struct PreparedSplat {
    pub center: Vec3,
    pub lu: Vec3,
    pub lv: Vec3,
    pub normal: Vec3,
    pub scale: [f64; 2],
    pub opacity: f64,
    pub color: Vec3,
    pub uncertainty: f64,
    /// Conservative support radius, three standard deviations.
    pub radius: f64,
    /// Half side lengths of the axis-aligned box around the support ellipse.
    pub extent: Vec3,
    pub q_hat: [f64; 4],
    pub q_norm: f64,
    pub unc_raw: f64,
    pub opacity_logit: f64,
}

impl PreparedSplat {
    pub fn new(s: &Splat2D) -> Self {
        let (q_hat, q_norm) = normalized_quaternion(&s.rotation);
        let m = quaternion_matrix(&q_hat);
        let scale = s.scales();
        let (lu, lv) = (m.column(0).into_owned(), m.column(1).into_owned());
        let extent = (lu * scale[0])
            .zip_map(&(lv * scale[1]), |a, b| (a * a + b * b).sqrt())
            * CUTOFF_SQ.sqrt();
        Self {
            center: s.center,
            lu,
            lv,
            normal: m.column(2).into_owned(),
            scale,
            opacity: s.opacity(),
            color: s.color,
            uncertainty: s.uncertainty(),
            radius: 3.0 * scale[0].max(scale[1]),
            extent,
            q_hat,
            q_norm,
            unc_raw: s.unc_raw,
            opacity_logit: s.opacity_logit,
        }
    }
}

/// The scene: an ordered list of splats.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatField {
    pub splats: Vec<Splat2D>,
    /// Set once geometry fitting is done; afterwards only colors may change.
    pub frozen_geometry: bool,
}

impl SplatField {
    pub fn new(splats: Vec<Splat2D>) -> Self {
        Self {
            splats,
            frozen_geometry: false,
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn prepare(&self) -> PreparedField {
        PreparedField::new(self)
    }

    /// Replaces every splat by four copies offset by half a scale along
    /// each tangent direction.
    pub fn densified(&self, copies_per_splat: usize) -> SplatField {
        if copies_per_splat <= 1 {
            return self.clone();
        }
        let offsets = [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)];
        let mut out = Vec::with_capacity(self.len() * copies_per_splat);
        for s in &self.splats {
            let p = PreparedSplat::new(s);
            for i in 0..copies_per_splat {
                let (a, b) = offsets[i % offsets.len()];
                let ring = 1.0 + (i / offsets.len()) as f64;
                let mut c = *s;
                c.center = s.center + p.lu * (a * ring * p.scale[0]) + p.lv * (b * ring * p.scale[1]);
                out.push(c);
            }
        }
        SplatField {
            splats: out,
            frozen_geometry: self.frozen_geometry,
        }
    }
}

/// Activated splats plus the acceleration grid used to cast rays.
#[derive(Clone, Debug)]
pub struct PreparedField {
    pub splats: Vec<PreparedSplat>,
    pub grid: SplatGrid,
}

impl PreparedField {
    pub fn new(field: &SplatField) -> Self {
        let splats: Vec<PreparedSplat> = field.splats.iter().map(PreparedSplat::new).collect();
        let grid = SplatGrid::build(&splats);
        Self { splats, grid }
    }

    /// Refreshes colors only; valid while geometry is unchanged.
    pub fn update_colors(&mut self, field: &SplatField) {
        for (p, s) in self.splats.iter_mut().zip(&field.splats) {
            p.color = s.color;
        }
    }
}
