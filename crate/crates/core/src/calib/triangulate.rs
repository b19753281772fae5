//! Depth from two-view correspondences and the robust triangulation loss.

use rayon::prelude::*;

use super::pose::{PoseGradient, PoseState};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Mat3, SE3Pose, Vec2, Vec3};
use crate::splat::{composite, DepthMode, PreparedField, RayUpstream};

/// Denominators below this make a coordinate's depth estimate degenerate.
pub const TRIANGULATION_EPS: f64 = 1e-9;

/// A matched pixel pair between camera frames `frame` and `frame + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub frame: usize,
    pub q_n: Vec2,
    pub q_next: Vec2,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Checks pixel bounds and that every pair has a following frame.
    pub fn validate(&self, intr: &Intrinsics, frames: usize) -> Result<()> {
        for (i, c) in self.pairs.iter().enumerate() {
            if c.frame + 1 >= frames {
                return Err(Error::Domain(format!("correspondence {i} refers to frame {} without a successor", c.frame)));
            }
            if !intr.contains(&c.q_n) || !intr.contains(&c.q_next) {
                return Err(Error::Domain(format!("correspondence {i} lies outside the image")));
            }
        }
        Ok(())
    }
}

/// Depth estimates in the first view from the x and y image coordinates of
/// the second; `None` marks a degenerate coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulatedDepth {
    pub from_x: Option<f64>,
    pub from_y: Option<f64>,
}

/// One coordinate's depth with its gradient on the relative pose.
struct DepthSolve {
    depth: f64,
    g_rotation: Mat3,
    g_translation: Vec3,
}

fn solve_row(row: usize, rel: &SE3Pose, a: &Vec3, b: f64) -> Option<DepthSolve> {
    let r = &rel.rotation;
    let t = &rel.translation;
    let ra = r.row(row).transpose().dot(a);
    let r3a = r.row(2).transpose().dot(a);
    let den = b * r3a - ra;
    if den.abs() < TRIANGULATION_EPS {
        return None;
    }
    let depth = (t[row] - b * t[2]) / den;
    let mut g_rotation = Mat3::zeros();
    let mut g_translation = Vec3::zeros();
    g_translation[row] = 1.0 / den;
    g_translation[2] = -b / den;
    for j in 0..3 {
        g_rotation[(row, j)] += depth * a[j] / den;
        g_rotation[(2, j)] += -depth * b * a[j] / den;
    }
    Some(DepthSolve {
        depth,
        g_rotation,
        g_translation,
    })
}

/// Closed-form depth of the first-view point given its match in the
/// second view and the relative pose from the first camera to the second.
pub fn triangulate_depth(intr: &Intrinsics, relative: &SE3Pose, q_n: &Vec2, q_next: &Vec2) -> TriangulatedDepth {
    let a = intr.backproject(q_n);
    let b = intr.backproject(q_next);
    TriangulatedDepth {
        from_x: solve_row(0, relative, &a, b.x).map(|s| s.depth),
        from_y: solve_row(1, relative, &a, b.y).map(|s| s.depth),
    }
}

/// Tukey biweight: `c^2/6 (1 - (1 - (r/c)^2)^3)` inside `[-c, c]`, `c^2/6`
/// outside.
pub fn tukey(r: f64, c: f64) -> f64 {
    let sat = c * c / 6.0;
    if r.abs() >= c {
        sat
    } else {
        let q = 1.0 - (r / c).powi(2);
        sat * (1.0 - q * q * q)
    }
}

pub fn tukey_derivative(r: f64, c: f64) -> f64 {
    if r.abs() >= c {
        0.0
    } else {
        let q = 1.0 - (r / c).powi(2);
        r * q * q
    }
}

/// Value, number of contributing terms and pose gradient of a loss term.
#[derive(Clone, Debug)]
pub struct PoseLoss {
    pub value: f64,
    pub terms: usize,
    pub grad: PoseGradient,
    /// Per-hit gradients on the raw splat parameters, through the
    /// rendered depths.
    pub hits: Vec<crate::splat::HitGradient>,
}

/// Mean Tukey penalty between triangulated and rendered depth, over all
/// non-degenerate coordinate estimates. Pairs whose rendered depth lacks
/// coverage are dropped.
pub fn triangulation_loss(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    pairs: &[Correspondence],
    c: f64,
) -> PoseLoss {
    struct Term {
        frame: usize,
        residuals: Vec<(f64, DepthSolve)>,
        sample: crate::splat::RaySample,
        ray: crate::geometry::Ray,
        dir_cam: Vec3,
    }
    let terms: Vec<Term> = pairs
        .par_iter()
        .filter_map(|p| {
            let (ray, dir_cam) = state.pixel_ray(intr, p.frame, &p.q_n).ok()?;
            let sample = composite(field, &ray, &DepthMode::camera(state.camera(p.frame)));
            if !sample.covered() {
                return None;
            }
            let zbar = sample.depth?;
            let rel = &state.relative[p.frame].pose;
            let a = intr.backproject(&p.q_n);
            let b = intr.backproject(&p.q_next);
            let residuals: Vec<(f64, DepthSolve)> = [solve_row(0, rel, &a, b.x), solve_row(1, rel, &a, b.y)]
                .into_iter()
                .flatten()
                .map(|s| (s.depth - zbar, s))
                .collect();
            (!residuals.is_empty()).then_some(Term {
                frame: p.frame,
                residuals,
                sample,
                ray,
                dir_cam,
            })
        })
        .collect();
    let n_terms: usize = terms.iter().map(|t| t.residuals.len()).sum();
    let frames = state.cameras.len();
    let mut out = PoseLoss {
        value: 0.0,
        terms: n_terms,
        grad: PoseGradient::zeros(frames),
        hits: Vec::new(),
    };
    if n_terms == 0 {
        if !pairs.is_empty() {
            log::warn!("triangulation loss: no usable correspondences");
        }
        return out;
    }
    let inv = 1.0 / n_terms as f64;
    for t in &terms {
        let mut g_zbar = 0.0;
        for (r, solve) in &t.residuals {
            out.value += tukey(*r, c) * inv;
            let d = tukey_derivative(*r, c) * inv;
            out.grad.add_relative(t.frame, &(solve.g_rotation * d), &(solve.g_translation * d));
            g_zbar -= d;
        }
        if g_zbar != 0.0 {
            let up = RayUpstream {
                depth: g_zbar,
                ..Default::default()
            };
            let g = t.sample.backward(field, &t.ray, &up);
            out.grad.add_ray(t.frame, &g, &t.dir_cam);
            out.hits.extend(g.hits);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, se3_exp, Se3Params};
    use rand::{Rng, SeedableRng};

    #[test]
    fn tukey_values() {
        assert_eq!(tukey(0.0, 1.0), 0.0);
        assert_eq!(tukey(5.0, 1.0), 1.0 / 6.0);
        assert!((tukey(0.5, 1.0) - 0.578125 / 6.0).abs() < 1e-15);
        assert_eq!(tukey(-0.3, 1.0), tukey(0.3, 1.0));
        assert_eq!(tukey_derivative(1.0, 1.0), 0.0);
    }

    #[test]
    fn tukey_derivative_matches_finite_differences() {
        for r in [-0.9, -0.4, 0.1, 0.55, 0.97] {
            let fd = (tukey(r + 1e-7, 1.0) - tukey(r - 1e-7, 1.0)) / 2e-7;
            assert!((fd - tukey_derivative(r, 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn rectified_stereo() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap();
        // second camera 0.5 m to the right: points shift left
        let rel = SE3Pose::from_translation(Vec3::new(-0.5, 0.0, 0.0));
        let d = triangulate_depth(&k, &rel, &Vec2::new(50.0, 40.0), &Vec2::new(25.0, 40.0));
        assert_eq!(d.from_x, Some(2.0));
        assert_eq!(d.from_y, None);
    }

    #[test]
    fn forward_motion_is_exact() {
        let k = Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).unwrap();
        let rel = SE3Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let p = Vec3::new(1.3, -0.7, 6.0);
        let (q1, _) = k.project(&p).unwrap();
        let (q2, _) = k.project(&rel.transform_point(&p)).unwrap();
        let d = triangulate_depth(&k, &rel, &q1, &q2);
        assert!((d.from_x.unwrap() - 6.0).abs() < 1e-9);
        assert!((d.from_y.unwrap() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn random_general_motion_is_exact() {
        let k = Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 200 {
            let rel = se3_exp(&Se3Params::from_array(std::array::from_fn(|_| rng.gen_range(-0.2..0.2))));
            let p = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(3.0..20.0));
            let (q1, _) = k.project(&p).unwrap();
            let Ok((q2, z2)) = project_point(&k, &rel, &p) else { continue };
            if z2 <= 0.0 {
                continue;
            }
            let d = triangulate_depth(&k, &rel, &q1, &q2);
            for z in [d.from_x, d.from_y].into_iter().flatten() {
                assert!((z - p.z).abs() < 1e-9 * p.z.max(1.0), "{z} vs {}", p.z);
            }
            checked += 1;
        }
    }

    #[test]
    fn row_gradient_matches_finite_differences() {
        let k = Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).unwrap();
        let rel = se3_exp(&Se3Params::from_array([0.3, -0.1, -0.8, 0.05, -0.02, 0.03]));
        let a = k.backproject(&Vec2::new(20.0, 30.0));
        let b = 0.21;
        let s = solve_row(0, &rel, &a, b).unwrap();
        let h = 1e-7;
        for i in 0..3 {
            let mut p = rel;
            p.translation[i] += h;
            let mut m = rel;
            m.translation[i] -= h;
            let fd = (solve_row(0, &p, &a, b).unwrap().depth - solve_row(0, &m, &a, b).unwrap().depth) / (2.0 * h);
            assert!((fd - s.g_translation[i]).abs() < 1e-6 * fd.abs().max(1.0));
            for j in 0..3 {
                let mut p = rel;
                p.rotation[(i, j)] += h;
                let mut m = rel;
                m.rotation[(i, j)] -= h;
                let fd = (solve_row(0, &p, &a, b).unwrap().depth - solve_row(0, &m, &a, b).unwrap().depth) / (2.0 * h);
                assert!((fd - s.g_rotation[(i, j)]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
