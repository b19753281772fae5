use rayon::prelude::*;

use super::LidarRay;
use crate::splat::{composite, param, DepthMode, PreparedField, RaySample, RayUpstream};

/// Weights of the four terms. Depth and uncertainty are 1 in training;
/// other values isolate single terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeomWeights {
    pub depth: f64,
    pub uncertainty: f64,
    pub distortion: f64,
    pub normal: f64,
}

impl GeomWeights {
    pub fn new(distortion: f64, normal: f64) -> Self {
        Self {
            depth: 1.0,
            uncertainty: 1.0,
            distortion,
            normal,
        }
    }
}

/// Loss components, each averaged over covered rays.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeomLoss {
    pub depth: f64,
    pub uncertainty: f64,
    pub distortion: f64,
    pub normal: f64,
    pub total: f64,
    pub covered: usize,
    pub skipped: usize,
}

impl GeomLoss {
    pub fn is_finite(&self) -> bool {
        [self.depth, self.uncertainty, self.distortion, self.normal, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn cast_lidar(field: &PreparedField, rays: &[LidarRay]) -> Vec<RaySample> {
    rays.par_iter()
        .map(|r| composite(field, &r.ray, &DepthMode::Range))
        .collect()
}

/// Geometric loss over `rays` and its gradient with respect to the raw
/// parameters of every splat (`param::COUNT` entries per splat). The
/// uncertainty term treats the realized depth error as a fixed target and
/// only moves the per-splat uncertainties.
pub fn geometric_loss(field: &PreparedField, rays: &[LidarRay], weights: &GeomWeights) -> (GeomLoss, Vec<f64>) {
    let samples = cast_lidar(field, rays);
    let mut out = GeomLoss::default();
    let mut grad = vec![0.0; field.splats.len() * param::COUNT];
    for (r, s) in rays.iter().zip(&samples) {
        if !s.covered() {
            out.skipped += 1;
            continue;
        }
        out.covered += 1;
        let err = s.depth.unwrap() - r.range;
        out.depth += err.abs();
        out.uncertainty += (s.error - err.abs()).abs();
        out.distortion += s.distortion();
        out.normal += s.normal_loss(field, &r.ray, &r.normal);
    }
    if out.covered == 0 {
        return (out, grad);
    }
    let inv = 1.0 / out.covered as f64;
    out.depth *= inv;
    out.uncertainty *= inv;
    out.distortion *= inv;
    out.normal *= inv;
    out.total = weights.depth * out.depth + weights.uncertainty * out.uncertainty + weights.distortion * out.distortion + weights.normal * out.normal;

    let per_ray: Vec<_> = rays
        .par_iter()
        .zip(samples.par_iter())
        .filter(|(_, s)| s.covered())
        .map(|(r, s)| {
            let err = s.depth.unwrap() - r.range;
            let up = RayUpstream {
                depth: weights.depth * sign(err) * inv,
                error_eps_only: weights.uncertainty * sign(s.error - err.abs()) * inv,
                distortion: weights.distortion * inv,
                normal: weights.normal * inv,
                normal_ref: r.normal,
                ..Default::default()
            };
            s.backward(field, &r.ray, &up)
        })
        .collect();
    for g in per_ray {
        for h in g.hits {
            let base = h.splat as usize * param::COUNT;
            for (acc, v) in grad[base..base + param::COUNT].iter_mut().zip(h.raw) {
                *acc += v;
            }
        }
    }
    (out, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Ray, Vec3};
    use crate::splat::{Splat2D, SplatField};

    fn ray_to(range: f64) -> LidarRay {
        LidarRay {
            ray: Ray::new(Vec3::zeros(), Vec3::x()),
            range,
            normal: -Vec3::x(),
            spacing: 0.0,
        }
    }

    fn wall(x: f64, eps: f64) -> Splat2D {
        let mut s = Splat2D::oriented(Vec3::new(x, 0.0, 0.0), &-Vec3::x(), &Vec3::y(), [0.5, 0.5], 0.5, eps);
        s.opacity_logit = 40.0;
        s
    }

    const W: GeomWeights = GeomWeights {
        depth: 1.0,
        uncertainty: 1.0,
        distortion: 1e4,
        normal: 0.1,
    };

    #[test]
    fn exact_fit_has_zero_loss() {
        let field = SplatField::new(vec![wall(4.0, 1e-12)]).prepare();
        let (l, _) = geometric_loss(&field, &[ray_to(4.0)], &W);
        assert!(l.depth.abs() < 1e-12 && l.uncertainty < 1e-9);
        assert_eq!(l.distortion, 0.0);
        assert!(l.normal.abs() < 1e-12);
    }

    #[test]
    fn splat_in_front_of_point() {
        let field = SplatField::new(vec![wall(3.7, 0.05)]).prepare();
        let (l, _) = geometric_loss(&field, &[ray_to(4.0)], &W);
        assert!((l.depth - 0.3).abs() < 1e-12);
        assert_eq!(l.covered, 1);
    }

    #[test]
    fn uncovered_rays_are_skipped() {
        let mut s = wall(3.0, 0.05);
        s.opacity_logit = 0.0;
        s.log_scale = [-3.0, -3.0];
        s.center.y = 0.5;
        let field = SplatField::new(vec![s]).prepare();
        let (l, g) = geometric_loss(&field, &[ray_to(4.0)], &W);
        assert_eq!((l.covered, l.skipped), (0, 1));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uncertainty_term_only_moves_uncertainty() {
        let mut a = wall(3.9, 0.2);
        a.opacity_logit = 0.3;
        let b = wall(4.2, 0.1);
        let field = SplatField::new(vec![a, b]).prepare();
        let only_unc = GeomWeights::new(0.0, 0.0);
        let (_, g_all) = geometric_loss(&field, &[ray_to(4.0)], &only_unc);
        // remove the depth term by placing the target at the rendered depth
        let s = composite(&field, &ray_to(4.0).ray, &DepthMode::Range);
        let (l, g) = geometric_loss(&field, &[ray_to(s.depth.unwrap())], &only_unc);
        assert!(l.depth < 1e-12 && l.uncertainty > 0.0);
        for k in 0..2 {
            for i in 0..param::COUNT {
                let v = g[k * param::COUNT + i];
                if i == param::UNCERTAINTY {
                    assert!(v.abs() > 0.0 || k == 1);
                } else {
                    assert_eq!(v, 0.0, "splat {k} param {i}");
                }
            }
        }
        assert!(g_all.iter().any(|&v| v != 0.0));
    }
}
