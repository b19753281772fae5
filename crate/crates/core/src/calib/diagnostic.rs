//! Closed-form photometric gradient on the extrinsic matrix, built from
//! per-splat tangent-plane sensitivities. Used to cross-check the
//! production gradient and to expose rays that graze their splats.

use nalgebra::Matrix4;

use super::image::Image;
use super::photometric::{photometric_terms, DEGENERATE_COS};
use super::pose::PoseState;
use crate::geometry::{Intrinsics, Vec2, Vec3};
use crate::splat::PreparedField;

/// Decomposition of one hit's point sensitivity.
#[derive(Clone, Copy, Debug)]
pub struct HitDiagnostic {
    pub frame: usize,
    pub splat: u32,
    /// In-plane gradient with respect to the hit point.
    pub tangential: Vec3,
    /// `<d, h> / <d, n>`; grows without bound as the ray grazes the splat.
    pub normal_coefficient: f64,
    /// `<d, n>` for the unit ray direction `d`.
    pub cos: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct AnalyticGradient {
    /// Elementwise gradient on the 4x4 extrinsic matrix; the bottom row
    /// is zero.
    pub matrix: Matrix4<f64>,
    /// The same, contracted onto the six se(3) coordinates.
    pub params: [f64; 6],
    pub hits: Vec<HitDiagnostic>,
    /// Hits left out for grazing incidence.
    pub degenerate: usize,
    pub loss: f64,
}

/// Photometric gradient on the extrinsic. Each hit's loss sensitivity to
/// its tangent coordinates becomes a world-space gradient on the hit point
/// along the ray, `h - kappa n`, which is pulled back through the camera
/// rotation and the LiDAR-frame position of the point. Hits with
/// `|<d, n>| < 1e-6` are flagged and excluded.
pub fn extrinsic_gradient_analytic(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    pixels: &[(usize, Vec2)],
    use_weights: bool,
) -> AnalyticGradient {
    let terms = photometric_terms(field, intr, state, images, pixels, use_weights);
    let mut matrix = Matrix4::zeros();
    let mut hits = Vec::new();
    let mut degenerate = 0;
    for r in &terms.rays {
        let g = r.sample.backward(field, &r.ray, &r.up);
        let cam = state.camera(r.frame);
        let lidar = &state.lidar_poses[r.frame];
        let d = r.ray.direction;
        for (hit, hg) in r.sample.hits.iter().zip(&g.hits) {
            let sp = &field.splats[hit.splat as usize];
            let h = sp.lu * (hg.du / sp.scale[0]) + sp.lv * (hg.dv / sp.scale[1]);
            let cos = d.dot(&sp.normal);
            let is_degenerate = cos.abs() < DEGENERATE_COS;
            let kappa = d.dot(&h) / cos;
            hits.push(HitDiagnostic {
                frame: r.frame,
                splat: hit.splat,
                tangential: h,
                normal_coefficient: kappa,
                cos,
                degenerate: is_degenerate,
            });
            if is_degenerate {
                degenerate += 1;
                continue;
            }
            let g_point = h - sp.normal * kappa;
            let y = lidar.transform_point(&r.ray.at(hit.s));
            let a = cam.rotation * g_point;
            for m in 0..3 {
                for n in 0..3 {
                    matrix[(m, n)] -= a[m] * y[n];
                }
                matrix[(m, 3)] -= a[m];
            }
        }
    }
    let e = &state.extrinsic;
    let params = std::array::from_fn(|k| {
        let mut s = 0.0;
        for m in 0..3 {
            for n in 0..3 {
                s += matrix[(m, n)] * e.d_rotation[k][(m, n)];
            }
            s += matrix[(m, 3)] * e.d_translation[k][m];
        }
        s
    });
    AnalyticGradient {
        matrix,
        params,
        hits,
        degenerate,
        loss: terms.value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::photometric::photometric_loss;
    use crate::geometry::{se3_exp, SE3Pose, Se3Params};
    use crate::splat::{Splat2D, SplatField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(8.0, 8.0, 3.5, 2.5, 8, 6).unwrap()
    }

    fn random_fixture(seed: u64) -> (PreparedField, PoseState, Vec<Image>, Vec<(usize, Vec2)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lidar: Vec<SE3Pose> = (0..2)
            .map(|i| se3_exp(&Se3Params::from_array([0.0, 0.0, -0.3 * i as f64, 0.0, 0.02 * i as f64, 0.0])))
            .collect();
        let xi = Se3Params::from_array(std::array::from_fn(|_| rng.gen_range(-0.05..0.05)));
        let state = PoseState::new(&xi, &lidar);
        let mut splats = Vec::new();
        for _ in 0..12 {
            let c = Vec3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0), rng.gen_range(3.0..6.0));
            let n = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), -1.0);
            let mut s = Splat2D::oriented(
                c,
                &n,
                &Vec3::new(1.0, rng.gen_range(-0.3..0.3), 0.0),
                [rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9)],
                rng.gen_range(0.3..0.9),
                rng.gen_range(0.0..0.5),
            );
            s.color = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            splats.push(s);
        }
        let field = SplatField::new(splats).prepare();
        let k = intr();
        let images = (0..2)
            .map(|_| {
                let data = (0..k.pixel_count()).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
                Image::new(k.width, k.height, data).unwrap()
            })
            .collect();
        let mut pixels = Vec::new();
        for f in 0..2 {
            for y in 0..k.height {
                for x in 0..k.width {
                    pixels.push((f, Vec2::new(x as f64 + rng.gen_range(-0.4..0.4), y as f64 + rng.gen_range(-0.4..0.4))));
                }
            }
        }
        // keep samples inside the bilinear domain
        for p in &mut pixels {
            p.1.x = p.1.x.clamp(0.0, (k.width - 1) as f64);
            p.1.y = p.1.y.clamp(0.0, (k.height - 1) as f64);
        }
        (field, state, images, pixels)
    }

    #[test]
    fn agrees_with_production_gradient() {
        for seed in 0..10 {
            let (field, state, images, pixels) = random_fixture(seed);
            for weighted in [true, false] {
                let a = extrinsic_gradient_analytic(&field, &intr(), &state, &images, &pixels, weighted);
                let p = photometric_loss(&field, &intr(), &state, &images, &pixels, weighted);
                assert!(a.degenerate == 0 && p.terms > 10);
                let b = p.grad.to_params(&state);
                let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for k in 0..6 {
                    assert!((a.params[k] - b[k]).abs() <= 1e-9 * scale.max(1e-12), "seed {seed} {k}: {} vs {}", a.params[k], b[k]);
                }
            }
        }
    }

    #[test]
    fn matches_finite_differences() {
        let (field, state, images, pixels) = random_fixture(3);
        let xi = crate::geometry::se3_log(&state.extrinsic.pose).to_array();
        let a = extrinsic_gradient_analytic(&field, &intr(), &state, &images, &pixels, true);
        for k in 0..6 {
            let eval = |x: [f64; 6]| {
                let st = PoseState::new(&Se3Params::from_array(x), &state.lidar_poses);
                photometric_loss(&field, &intr(), &st, &images, &pixels, true).value
            };
            let (mut p, mut m) = (xi, xi);
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (eval(p) - eval(m)) / 2e-6;
            assert!((fd - a.params[k]).abs() < 1e-5 * fd.abs().max(1e-3), "{k}: {fd} vs {}", a.params[k]);
        }
    }

    fn single_splat_state() -> PoseState {
        PoseState::new(&Se3Params::zero(), &[SE3Pose::identity()])
    }

    #[test]
    fn exact_fit_is_stationary() {
        let (field, state, _, pixels) = random_fixture(5);
        let k = intr();
        let images: Vec<Image> = (0..2)
            .map(|f| {
                let view = crate::splat::render_view(&field, &k, state.camera(f), 1);
                Image::new(k.width, k.height, view.color).unwrap()
            })
            .collect();
        let grid: Vec<(usize, Vec2)> = pixels.iter().map(|(f, p)| (*f, Vec2::new(p.x.round(), p.y.round()))).collect();
        let a = extrinsic_gradient_analytic(&field, &k, &state, &images, &grid, true);
        assert!(a.loss < 1e-20);
        assert!(a.params.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn ray_along_normal_has_zero_normal_coefficient() {
        let k = intr();
        let mut s = Splat2D::oriented(Vec3::new(0.2, -0.1, 4.0), &-Vec3::z(), &Vec3::x(), [1.0, 1.0], 0.8, 0.1);
        s.color = Vec3::new(0.9, 0.1, 0.4);
        let field = SplatField::new(vec![s]).prepare();
        let img = Image::filled(k.width, k.height, Vec3::zeros());
        let a = extrinsic_gradient_analytic(&field, &k, &single_splat_state(), &[img], &[(0, Vec2::new(k.cx, k.cy))], true);
        assert_eq!(a.hits.len(), 1);
        let h = a.hits[0];
        assert!((h.cos + 1.0).abs() < 1e-15);
        assert!(h.tangential.norm() > 1e-3);
        assert!(h.normal_coefficient.is_finite() && h.normal_coefficient.abs() < 1e-12);
    }

    #[test]
    fn flags_exactly_grazing_splats() {
        let k = intr();
        let state = single_splat_state();
        let px = Vec2::new(k.cx + 1.0, k.cy - 0.5);
        let (ray, _) = state.pixel_ray(&k, 0, &px).unwrap();
        let d = ray.direction;
        let side = d.cross(&Vec3::y()).normalize();
        let mut splats = Vec::new();
        let mut expect = Vec::new();
        // each splat is centered on the ray, its normal tilted towards `d`
        for (i, tilt) in [2e-7, 0.5, 8e-7, 3e-6, -4e-7, 1e-5].into_iter().enumerate() {
            let n = (side + d * tilt).normalize();
            let c = ray.at(2.0 + 0.5 * i as f64);
            let mut s = Splat2D::oriented(c, &n, &d, [0.5, 0.5], 0.2, 0.1);
            s.color = Vec3::new(0.5, 0.2, 0.1);
            splats.push(s);
            expect.push((i as u32, d.dot(&n).abs() < 1e-6));
        }
        let field = SplatField::new(splats).prepare();
        let img = Image::filled(k.width, k.height, Vec3::new(0.1, 0.1, 0.1));
        let a = extrinsic_gradient_analytic(&field, &k, &state, &[img], &[(0, px)], true);
        assert_eq!(a.hits.len(), 6);
        let mut got: Vec<(u32, bool)> = a.hits.iter().map(|h| (h.splat, h.degenerate)).collect();
        got.sort();
        assert_eq!(got, expect);
        assert_eq!(a.degenerate, 3);
    }
}
