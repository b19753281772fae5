//! Uncertainty-weighted photometric loss between rendered splat colors and
//! camera pixels.

use rayon::prelude::*;

use super::image::Image;
use super::pose::{PoseGradient, PoseState};
use crate::geometry::{Intrinsics, Ray, Vec2, Vec3};
use crate::splat::{
    composite, DepthMode, HitGradient, PreparedField, RayGradient, RaySample, RayUpstream, COVERAGE_MIN,
};

/// Hits with `|<d, n>|` below this are counted as degenerate: the pose
/// gradient through them is dominated by the normal coefficient.
pub const DEGENERATE_COS: f64 = 1e-6;

/// One pixel ray with its loss sensitivities.
pub(crate) struct PhotoRay {
    pub frame: usize,
    pub ray: Ray,
    pub dir_cam: Vec3,
    pub sample: RaySample,
    pub up: RayUpstream,
}

pub(crate) struct PhotoTerms {
    pub value: f64,
    pub rays: Vec<PhotoRay>,
    /// Pixels dropped for low coverage or invalid rays.
    pub skipped: usize,
}

/// Weighted loss and its upstream sensitivities per ray.
pub(crate) fn photometric_terms(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    pixels: &[(usize, Vec2)],
    use_weights: bool,
) -> PhotoTerms {
    let rendered: Vec<(usize, Ray, Vec3, RaySample, Vec3)> = pixels
        .par_iter()
        .filter_map(|(frame, px)| {
            let target = images[*frame].bilinear(px)?.color;
            let (ray, dir_cam) = state.pixel_ray(intr, *frame, px).ok()?;
            let sample = composite(field, &ray, &DepthMode::camera(state.camera(*frame)));
            (sample.weight_sum >= COVERAGE_MIN).then_some((*frame, ray, dir_cam, sample, target))
        })
        .collect();
    let skipped = pixels.len() - rendered.len();
    let weights: Vec<f64> = rendered
        .iter()
        .map(|r| if use_weights { (-r.3.error).exp() } else { 1.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if rendered.is_empty() || !(total > 0.0) {
        return PhotoTerms {
            value: 0.0,
            rays: Vec::new(),
            skipped,
        };
    }
    let value = rendered
        .iter()
        .zip(&weights)
        .map(|(r, w)| w * (r.3.color - r.4).norm_squared())
        .sum::<f64>()
        / total;
    let rays = rendered
        .into_iter()
        .zip(&weights)
        .map(|((frame, ray, dir_cam, sample, target), w)| {
            let residual = sample.color - target;
            let error = if use_weights {
                -w * (residual.norm_squared() - value) / total
            } else {
                0.0
            };
            let up = RayUpstream {
                color: residual * (2.0 * w / total),
                error,
                ..Default::default()
            };
            PhotoRay {
                frame,
                ray,
                dir_cam,
                sample,
                up,
            }
        })
        .collect();
    PhotoTerms { value, rays, skipped }
}

#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub value: f64,
    /// Rays that entered the loss.
    pub terms: usize,
    pub skipped: usize,
    pub grad: PoseGradient,
    /// Per splat gradient on its color.
    pub colors: Vec<Vec3>,
    /// Per-hit gradients on all raw splat parameters.
    pub splat_hits: Vec<HitGradient>,
    pub hits: usize,
    pub degenerate_hits: usize,
}

/// `sum w_i |c_i - c_i^obs|^2 / sum w_i` over covered pixels with
/// `w_i = exp(-e_i)` (or 1 without uncertainty weighting). Pixels whose
/// accumulated weight is below [`COVERAGE_MIN`] are left out; if none are
/// left the loss is zero with no gradient.
pub fn photometric_loss(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    pixels: &[(usize, Vec2)],
    use_weights: bool,
) -> PhotometricLoss {
    let terms = photometric_terms(field, intr, state, images, pixels, use_weights);
    let mut out = PhotometricLoss {
        value: terms.value,
        terms: terms.rays.len(),
        skipped: terms.skipped,
        grad: PoseGradient::zeros(state.cameras.len()),
        colors: vec![Vec3::zeros(); field.splats.len()],
        splat_hits: Vec::new(),
        hits: 0,
        degenerate_hits: 0,
    };
    if terms.rays.is_empty() {
        if !pixels.is_empty() {
            log::warn!("photometric loss: no pixel with enough coverage");
        }
        return out;
    }
    let grads: Vec<RayGradient> = terms
        .rays
        .par_iter()
        .map(|r| r.sample.backward(field, &r.ray, &r.up))
        .collect();
    for (r, g) in terms.rays.iter().zip(grads) {
        out.grad.add_ray(r.frame, &g, &r.dir_cam);
        for h in &g.hits {
            let c = crate::splat::param::COLOR;
            out.colors[h.splat as usize] += Vec3::new(h.raw[c], h.raw[c + 1], h.raw[c + 2]);
        }
        out.splat_hits.extend(g.hits);
        for h in &r.sample.hits {
            out.hits += 1;
            if r.ray.direction.dot(&field.splats[h.splat as usize].normal).abs() < DEGENERATE_COS {
                out.degenerate_hits += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SE3Pose, Se3Params};
    use crate::splat::{Splat2D, SplatField};

    fn fixture(color: Vec3, unc: f64) -> (PreparedField, Intrinsics, PoseState) {
        let k = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 3, 3).unwrap();
        let mut s = Splat2D::oriented(Vec3::new(0.0, 0.0, 5.0), &-Vec3::z(), &Vec3::x(), [10.0, 10.0], 0.999999, unc);
        s.color = color;
        let st = PoseState::new(&Se3Params::zero(), &[SE3Pose::identity()]);
        (SplatField::new(vec![s]).prepare(), k, st)
    }

    #[test]
    fn matching_colors_give_zero() {
        let (f, k, st) = fixture(Vec3::new(0.2, 0.4, 0.6), 0.1);
        let c = composite(&f, &st.pixel_ray(&k, 0, &Vec2::new(1.0, 1.0)).unwrap().0, &DepthMode::Range).color;
        let img = Image::filled(3, 3, c);
        let l = photometric_loss(&f, &k, &st, &[img], &[(0, Vec2::new(1.0, 1.0))], true);
        assert!(l.value.abs() < 1e-15);
        assert_eq!(l.terms, 1);
    }

    #[test]
    fn single_pixel_hand_value() {
        // a one-pixel batch normalizes its own weight away
        let (f, k, st) = fixture(Vec3::new(1.0, 0.0, 0.0), 2f64.ln());
        let c = composite(&f, &st.pixel_ray(&k, 0, &Vec2::new(1.0, 1.0)).unwrap().0, &DepthMode::Range);
        assert!(c.weight_sum > 0.999);
        let img = Image::filled(3, 3, Vec3::zeros());
        let l = photometric_loss(&f, &k, &st, &[img], &[(0, Vec2::new(1.0, 1.0))], true);
        assert!((l.value - c.color.norm_squared()).abs() < 1e-12);
        assert!((l.value - 1.0).abs() < 1e-5);
    }

    #[test]
    fn weighted_and_plain_means_by_hand() {
        let (f, k, st) = fixture(Vec3::new(0.5, 0.5, 0.5), 1.0);
        let img = Image::filled(3, 3, Vec3::zeros());
        let px = [(0, Vec2::new(0.0, 0.0)), (0, Vec2::new(1.0, 1.0)), (0, Vec2::new(2.0, 0.5))];
        let samples: Vec<RaySample> = px
            .iter()
            .map(|(_, p)| composite(&f, &st.pixel_ray(&k, 0, p).unwrap().0, &DepthMode::Range))
            .collect();
        let plain = samples.iter().map(|s| s.color.norm_squared()).sum::<f64>() / 3.0;
        let w: Vec<f64> = samples.iter().map(|s| (-s.error).exp()).collect();
        let weighted = samples.iter().zip(&w).map(|(s, w)| w * s.color.norm_squared()).sum::<f64>() / w.iter().sum::<f64>();
        let a = photometric_loss(&f, &k, &st, std::slice::from_ref(&img), &px, false);
        let b = photometric_loss(&f, &k, &st, &[img], &px, true);
        assert!((a.value - plain).abs() < 1e-14);
        assert!((b.value - weighted).abs() < 1e-14);
        assert!((a.value - b.value).abs() > 1e-9);
    }

    #[test]
    fn uncovered_batch_is_skipped() {
        let (f, k, _) = fixture(Vec3::new(0.5, 0.5, 0.5), 1.0);
        let st = PoseState::new(&Se3Params::zero(), &[SE3Pose::from_translation(Vec3::new(100.0, 0.0, 0.0))]);
        let img = Image::filled(3, 3, Vec3::zeros());
        let l = photometric_loss(&f, &k, &st, &[img], &[(0, Vec2::new(1.0, 1.0))], true);
        assert_eq!(l.terms, 0);
        assert_eq!(l.skipped, 1);
        assert_eq!(l.value, 0.0);
    }
}
