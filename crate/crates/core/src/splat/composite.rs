//! Ray casting against the splat field and front-to-back alpha blending.
//!
//! Intersections are solved in world space as a ray/plane problem. For a
//! pinhole ray this yields the same point as the screen-space homogeneous
//! formulation of 2D splatting.

use std::cell::RefCell;
use std::cmp::Ordering;

use super::{quaternion_backward, sigmoid, PreparedField, PreparedSplat, RawParams, Splat2D, SplatField};
use crate::geometry::{Mat3, Ray, SE3Pose, Vec3};

/// Gaussian support cutoff on `u^2 + v^2` (three standard deviations).
pub const CUTOFF_SQ: f64 = 9.0;
/// Hits with a smaller alpha are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Blending stops once the remaining transmittance drops below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Rays with `|<d, n>|` below this are parallel to the splat plane.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Minimum depth of a valid intersection, in meters.
pub const NEAR_CLIP: f64 = 1e-2;
/// Rays whose accumulated weight is below this carry no usable depth.
pub const COVERAGE_MIN: f64 = 0.5;
/// Near and far planes of the normalized depth used by the distortion term.
pub const DISTORTION_NEAR: f64 = 0.01;
pub const DISTORTION_FAR: f64 = 100.0;

/// Depth mapped to normalized device range, `0` at the near plane and `1`
/// at the far plane. The distortion term works on this scale so that its
/// weight does not depend on scene size.
pub fn ndc_depth(z: f64) -> f64 {
    DISTORTION_FAR * (z - DISTORTION_NEAR) / ((DISTORTION_FAR - DISTORTION_NEAR) * z)
}

fn ndc_depth_slope(z: f64) -> f64 {
    DISTORTION_FAR * DISTORTION_NEAR / ((DISTORTION_FAR - DISTORTION_NEAR) * z * z)
}

/// How intersection depths are measured along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthMode {
    /// Distance along the ray (LiDAR range).
    Range,
    /// Coordinate along the given unit axis, the camera z axis in world space.
    Axis(Vec3),
}

impl DepthMode {
    pub fn camera(world_to_cam: &SE3Pose) -> Self {
        DepthMode::Axis(world_to_cam.rotation.row(2).transpose())
    }

    /// Depth per unit of ray parameter. For rays leaving the camera center
    /// this is `1 / |K^-1 x|`, independent of the camera pose.
    pub fn scale(&self, direction: &Vec3) -> f64 {
        match self {
            DepthMode::Range => 1.0,
            DepthMode::Axis(a) => direction.dot(a),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Intersection {
    pub s: f64,
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

pub(crate) fn intersect_prepared(p: &PreparedSplat, ray: &Ray, depth_scale: f64) -> Option<Intersection> {
    let den = ray.direction.dot(&p.normal);
    if den.abs() < PARALLEL_EPS {
        return None;
    }
    let s = (p.center - ray.origin).dot(&p.normal) / den;
    let z = s * depth_scale;
    if z <= NEAR_CLIP {
        return None;
    }
    let r = ray.at(s) - p.center;
    Some(Intersection {
        s,
        u: r.dot(&p.lu) / p.scale[0],
        v: r.dot(&p.lv) / p.scale[1],
        z,
    })
}

/// Tangent-plane coordinates and depth of the ray/splat intersection.
pub fn ray_splat_intersect(splat: &Splat2D, ray: &Ray, depth: &DepthMode) -> Option<(f64, f64, f64)> {
    let p = PreparedSplat::new(splat);
    intersect_prepared(&p, ray, depth.scale(&ray.direction)).map(|i| (i.u, i.v, i.z))
}

fn alpha_of(opacity: f64, u: f64, v: f64) -> f64 {
    let q = u * u + v * v;
    if q > CUTOFF_SQ {
        0.0
    } else {
        opacity * (-0.5 * q).exp()
    }
}

/// Opacity-scaled Gaussian falloff at tangent coordinates `(u, v)`.
pub fn splat_alpha(splat: &Splat2D, u: f64, v: f64) -> f64 {
    alpha_of(splat.opacity(), u, v)
}

/// One blended intersection, in front-to-back order.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub splat: u32,
    pub u: f64,
    pub v: f64,
    /// Ray parameter of the intersection.
    pub s: f64,
    pub z: f64,
    pub alpha: f64,
    /// Transmittance in front of this hit.
    pub transmittance: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RaySample {
    pub hits: Vec<Hit>,
    /// Unnormalized blend `sum w_k c_k`; the background adds nothing.
    pub color: Vec3,
    /// Weight-normalized depth, `None` when nothing was hit.
    pub depth: Option<f64>,
    /// Blended depth uncertainty `sum w_k eps_k`.
    pub error: f64,
    pub weight_sum: f64,
    pub depth_scale: f64,
}

impl RaySample {
    /// Enough surface coverage for depth-based losses.
    pub fn covered(&self) -> bool {
        self.weight_sum >= COVERAGE_MIN && self.depth.is_some()
    }

    /// Pairwise weighted depth spread `sum_{j<k} w_j w_k |m_j - m_k| / W^2`
    /// over normalized depths `m` (see [`ndc_depth`]), `W` the weight sum.
    pub fn distortion(&self) -> f64 {
        if self.weight_sum <= 0.0 {
            return 0.0;
        }
        self.distortion_raw() / (self.weight_sum * self.weight_sum)
    }

    fn distortion_raw(&self) -> f64 {
        let mut acc_w = 0.0;
        let mut acc_wz = 0.0;
        let mut total = 0.0;
        for h in &self.hits {
            let m = ndc_depth(h.z);
            total += h.weight * (m * acc_w - acc_wz);
            acc_w += h.weight;
            acc_wz += h.weight * m;
        }
        total
    }

    /// `sum w_k (1 - <n_k, n_ref>) / W` with splat normals turned toward the
    /// ray origin.
    pub fn normal_loss(&self, field: &PreparedField, ray: &Ray, reference: &Vec3) -> f64 {
        if self.weight_sum <= 0.0 {
            return 0.0;
        }
        self.normal_raw(field, ray, reference) / self.weight_sum
    }

    fn normal_raw(&self, field: &PreparedField, ray: &Ray, reference: &Vec3) -> f64 {
        self.hits
            .iter()
            .map(|h| {
                let n = facing_normal(&field.splats[h.splat as usize], ray);
                h.weight * (1.0 - n.dot(reference))
            })
            .sum()
    }
}

fn facing_sign(p: &PreparedSplat, ray: &Ray) -> f64 {
    if p.normal.dot(&ray.direction) < 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn facing_normal(p: &PreparedSplat, ray: &Ray) -> Vec3 {
    p.normal * facing_sign(p, ray)
}

thread_local! {
    static CANDIDATES: RefCell<Vec<u32>> = const { RefCell::new(Vec::new()) };
}

fn hit_order(field: &PreparedField, a: &Hit, b: &Hit) -> Ordering {
    let (pa, pb) = (&field.splats[a.splat as usize], &field.splats[b.splat as usize]);
    a.s.total_cmp(&b.s)
        .then(pa.center.x.total_cmp(&pb.center.x))
        .then(pa.center.y.total_cmp(&pb.center.y))
        .then(pa.center.z.total_cmp(&pb.center.z))
        .then(a.alpha.total_cmp(&b.alpha))
}

/// Casts `ray` through the field and blends the hits front to back.
pub fn composite(field: &PreparedField, ray: &Ray, depth: &DepthMode) -> RaySample {
    let depth_scale = depth.scale(&ray.direction);
    let mut hits: Vec<Hit> = CANDIDATES.with(|buf| {
        let mut cand = buf.borrow_mut();
        field.grid.candidates(ray, &mut cand);
        let mut hits = Vec::new();
        for &k in cand.iter() {
            let p = &field.splats[k as usize];
            let oc = p.center - ray.origin;
            let t = oc.dot(&ray.direction);
            if t < -p.radius || oc.norm_squared() - t * t > p.radius * p.radius {
                continue;
            }
            let Some(i) = intersect_prepared(p, ray, depth_scale) else {
                continue;
            };
            let alpha = alpha_of(p.opacity, i.u, i.v);
            if alpha < ALPHA_SKIP {
                continue;
            }
            hits.push(Hit {
                splat: k,
                u: i.u,
                v: i.v,
                s: i.s,
                z: i.z,
                alpha,
                transmittance: 0.0,
                weight: 0.0,
            });
        }
        hits
    });
    hits.sort_by(|a, b| hit_order(field, a, b));

    let mut out = RaySample {
        depth_scale,
        ..Default::default()
    };
    let mut t = 1.0;
    let mut used = 0;
    let mut depth_sum = 0.0;
    for h in hits.iter_mut() {
        if t < TRANSMITTANCE_STOP {
            break;
        }
        let p = &field.splats[h.splat as usize];
        h.transmittance = t;
        h.weight = h.alpha * t;
        out.color += p.color * h.weight;
        out.error += p.uncertainty * h.weight;
        out.weight_sum += h.weight;
        depth_sum += h.weight * h.z;
        t *= 1.0 - h.alpha;
        used += 1;
    }
    hits.truncate(used);
    out.hits = hits;
    if out.weight_sum > 0.0 {
        out.depth = Some(depth_sum / out.weight_sum);
    }
    out
}

/// Convenience wrapper measuring depth along the camera z axis. Prepares
/// the field on every call; batch callers should use [`composite`].
pub fn composite_ray(field: &SplatField, ray: &Ray, world_to_cam: &SE3Pose) -> RaySample {
    composite(&field.prepare(), ray, &DepthMode::camera(world_to_cam))
}

/// Loss sensitivities with respect to the blended outputs of one ray.
#[derive(Clone, Copy, Debug, Default)]
pub struct RayUpstream {
    /// dL / d color
    pub color: Vec3,
    /// dL / d depth (normalized depth)
    pub depth: f64,
    /// dL / d error, propagated through weights and uncertainties
    pub error: f64,
    /// dL / d error, propagated to the uncertainties only
    pub error_eps_only: f64,
    /// dL / d distortion
    pub distortion: f64,
    /// dL / d normal loss, with `normal_ref` the reference normal
    pub normal: f64,
    pub normal_ref: Vec3,
}

#[derive(Clone, Debug)]
pub struct HitGradient {
    pub splat: u32,
    pub raw: RawParams,
    /// dL / du and dL / dv at this hit.
    pub du: f64,
    pub dv: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RayGradient {
    pub hits: Vec<HitGradient>,
    pub origin: Vec3,
    /// Gradient with respect to the unit direction, holding the depth
    /// scale fixed.
    pub direction: Vec3,
}

impl RaySample {
    /// Reverse-mode pass through blending, the Gaussian falloff, the
    /// intersection and the splat activations.
    pub fn backward(&self, field: &PreparedField, ray: &Ray, up: &RayUpstream) -> RayGradient {
        let n = self.hits.len();
        let mut out = RayGradient {
            hits: Vec::with_capacity(n),
            ..Default::default()
        };
        if n == 0 {
            return out;
        }
        let w_sum = self.weight_sum;
        let zbar = self.depth.unwrap_or(0.0);
        let depth_active = up.depth != 0.0 && w_sum > 0.0;

        let ndc: Vec<f64> = self.hits.iter().map(|h| ndc_depth(h.z)).collect();
        let mut prefix_w = vec![0.0; n + 1];
        let mut prefix_wz = vec![0.0; n + 1];
        for (i, h) in self.hits.iter().enumerate() {
            prefix_w[i + 1] = prefix_w[i] + h.weight;
            prefix_wz[i + 1] = prefix_wz[i] + h.weight * ndc[i];
        }
        let (tot_w, tot_wz) = (prefix_w[n], prefix_wz[n]);

        // both terms are divided by powers of the weight sum
        let dist = if up.distortion != 0.0 { self.distortion_raw() } else { 0.0 };
        let norm = if up.normal != 0.0 { self.normal_raw(field, ray, &up.normal_ref) } else { 0.0 };
        let (inv_w, inv_w2) = (1.0 / w_sum, 1.0 / (w_sum * w_sum));

        let mut g_weight = vec![0.0; n];
        let mut g_z = vec![0.0; n];
        let mut signs = vec![1.0; n];
        for (m, h) in self.hits.iter().enumerate() {
            let p = &field.splats[h.splat as usize];
            signs[m] = facing_sign(p, ray);
            let mut gw = up.color.dot(&p.color) + up.error * p.uncertainty;
            if depth_active {
                gw += up.depth * (h.z - zbar) / w_sum;
                g_z[m] += up.depth * h.weight / w_sum;
            }
            if up.normal != 0.0 {
                gw += up.normal * ((1.0 - signs[m] * p.normal.dot(&up.normal_ref)) * inv_w - norm * inv_w2);
            }
            if up.distortion != 0.0 {
                let (bw, bwz) = (prefix_w[m], prefix_wz[m]);
                let (aw, awz) = (tot_w - prefix_w[m + 1], tot_wz - prefix_wz[m + 1]);
                let mz = ndc[m];
                gw += up.distortion * (((mz * bw - bwz) + (awz - mz * aw)) * inv_w2 - 2.0 * dist * inv_w2 * inv_w);
                g_z[m] += up.distortion * h.weight * (bw - aw) * ndc_depth_slope(h.z) * inv_w2;
            }
            g_weight[m] = gw;
        }

        // dL/d alpha_j = T_j (dL/dw_j - S_j), S_j collecting the later hits.
        let mut g_alpha = vec![0.0; n];
        let mut later = 0.0;
        for j in (0..n).rev() {
            let h = &self.hits[j];
            g_alpha[j] = h.transmittance * (g_weight[j] - later);
            later = g_weight[j] * h.alpha + (1.0 - h.alpha) * later;
        }

        let (o, d) = (ray.origin, ray.direction);
        for (m, h) in self.hits.iter().enumerate() {
            let p = &field.splats[h.splat as usize];
            let mut raw = [0.0; super::param::COUNT];

            // alpha = opacity * exp(-(u^2 + v^2) / 2)
            let ga = g_alpha[m];
            raw[super::param::OPACITY] = ga * h.alpha * (1.0 - p.opacity);
            let gu = -ga * h.alpha * h.u;
            let gv = -ga * h.alpha * h.v;

            let g_color = up.color * h.weight;
            raw[super::param::COLOR..super::param::COLOR + 3].copy_from_slice(g_color.as_slice());
            let g_eps = h.weight * (up.error + up.error_eps_only);
            raw[super::param::UNCERTAINTY] = g_eps * sigmoid(p.unc_raw);

            let gs = g_z[m] * self.depth_scale;
            let x = o + d * h.s;
            let r = x - p.center;
            let (su, sv) = (p.scale[0], p.scale[1]);

            let gr = p.lu * (gu / su) + p.lv * (gv / sv);
            let g_lu = r * (gu / su);
            let g_lv = r * (gv / sv);
            raw[super::param::LOG_SCALE] = -gu * h.u;
            raw[super::param::LOG_SCALE + 1] = -gv * h.v;

            let mut gp = -gr;
            out.origin += gr;
            out.direction += gr * h.s;
            let gs_total = gs + gr.dot(&d);

            let den = d.dot(&p.normal);
            let pc = p.center - o;
            let g_num = gs_total / den;
            let g_den = -gs_total * h.s / den;
            gp += p.normal * g_num;
            out.origin -= p.normal * g_num;
            out.direction += p.normal * g_den;
            let mut g_n = pc * g_num + d * g_den;
            if up.normal != 0.0 {
                g_n -= up.normal_ref * (up.normal * h.weight * signs[m] * inv_w);
            }

            raw[super::param::CENTER..super::param::CENTER + 3].copy_from_slice(gp.as_slice());
            let g_frame = Mat3::from_columns(&[g_lu, g_lv, g_n]);
            let gq = quaternion_backward(&p.q_hat, p.q_norm, &g_frame);
            raw[super::param::ROTATION..super::param::ROTATION + 4].copy_from_slice(&gq);

            out.hits.push(HitGradient {
                splat: h.splat,
                raw,
                du: gu,
                dv: gv,
            });
        }
        out
    }
}
