//! Depth-based warping of pixels into the next view, occlusion masking and
//! the reprojection color-consistency loss.

use rayon::prelude::*;

use super::image::Image;
use super::pose::{PoseGradient, PoseState};
use super::triangulate::PoseLoss;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Mat3, Ray, SE3Pose, Vec2, Vec3, SINGULAR_DEPTH};
use crate::splat::{composite, render_view, DepthMode, PreparedField, RaySample, RayUpstream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reprojected {
    pub pixel: Vec2,
    /// Depth of the warped point in the destination camera.
    pub depth: f64,
}

/// Warps pixel `v` at depth `zbar` through the relative pose from its view
/// to the next. Points landing behind the destination camera are reported
/// as [`Error::SingularProjection`].
pub fn reproject_pixel(intr: &Intrinsics, relative: &SE3Pose, v: &Vec2, zbar: f64) -> Result<Reprojected> {
    if !(zbar > 0.0) {
        return Err(Error::Domain(format!("reprojection depth {zbar} must be positive")));
    }
    let y = relative.rotation * intr.backproject(v) * zbar + relative.translation;
    if y.z <= SINGULAR_DEPTH {
        return Err(Error::SingularProjection(y.z));
    }
    let (pixel, depth) = intr.project(&y)?;
    Ok(Reprojected { pixel, depth })
}

/// A source pixel that passed every validity check, with what is needed to
/// backpropagate through it.
struct Warp {
    frame: usize,
    ray: Ray,
    dir_cam: Vec3,
    sample: RaySample,
    zbar: f64,
    a: Vec3,
    y: Vec3,
    target: Vec3,
    sampled: crate::calib::image::Sample,
}

fn warp(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    frame: usize,
    v: &Vec2,
    theta2: f64,
) -> Option<Warp> {
    if frame + 1 >= images.len() {
        return None;
    }
    let (ray, dir_cam) = state.pixel_ray(intr, frame, v).ok()?;
    let sample = composite(field, &ray, &DepthMode::camera(state.camera(frame)));
    if !sample.covered() {
        return None;
    }
    let zbar = sample.depth?;
    let rel = &state.relative[frame].pose;
    let a = intr.backproject(v);
    let y = rel.rotation * a * zbar + rel.translation;
    let w = reproject_pixel(intr, rel, v, zbar).ok()?;
    let dest = &images[frame + 1];
    let sampled = dest.bilinear(&w.pixel)?;
    // depth the destination view renders at the warped pixel
    let (dray, _) = state.pixel_ray(intr, frame + 1, &w.pixel).ok()?;
    let seen = composite(field, &dray, &DepthMode::camera(state.camera(frame + 1)));
    if !seen.covered() || (w.depth - seen.depth?).abs() > theta2 {
        return None;
    }
    let target = images[frame].bilinear(v)?.color;
    Some(Warp {
        frame,
        ray,
        dir_cam,
        sample,
        zbar,
        a,
        y,
        target,
        sampled,
    })
}

/// Reprojection mask over the strided pixel grid of view `frame`, row-major
/// with `ceil(width / stride)` columns. True where the warped pixel lands in
/// the next image in front of its camera and agrees with that view's
/// rendered depth within `theta2`.
pub fn occlusion_mask(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    frame: usize,
    stride: usize,
    theta2: f64,
) -> Vec<bool> {
    let view = render_view(field, intr, state.camera(frame), stride);
    (0..view.color.len())
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i % view.width, i / view.width);
            let v = view.pixel(col, row);
            warp(field, intr, state, images, frame, &v, theta2).is_some()
        })
        .collect()
}

/// The strided source pixels of every frame pair, `(frame, pixel)`.
pub fn strided_pixels(intr: &Intrinsics, pairs: usize, stride: usize) -> Vec<(usize, Vec2)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for frame in 0..pairs {
        for y in (0..intr.height).step_by(stride) {
            for x in (0..intr.width).step_by(stride) {
                out.push((frame, Vec2::new(x as f64, y as f64)));
            }
        }
    }
    out
}

/// Mean squared color difference between each source pixel and its warp
/// into the next image, over the pixels that survive masking. Gradients
/// reach the pose through the rendered depth and the relative pose; the
/// mask itself is held constant.
pub fn reprojection_loss(
    field: &PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    pixels: &[(usize, Vec2)],
    theta2: f64,
) -> PoseLoss {
    let warps: Vec<Warp> = pixels
        .par_iter()
        .filter_map(|(frame, v)| warp(field, intr, state, images, *frame, v, theta2))
        .collect();
    let mut out = PoseLoss {
        value: 0.0,
        terms: warps.len(),
        grad: PoseGradient::zeros(state.cameras.len()),
        hits: Vec::new(),
    };
    if warps.is_empty() {
        if !pixels.is_empty() {
            log::warn!("reprojection loss: every pixel masked");
        }
        return out;
    }
    let inv = 1.0 / warps.len() as f64;
    let grads: Vec<(f64, Mat3, Vec3, Option<crate::splat::RayGradient>)> = warps
        .par_iter()
        .map(|w| {
            let r = w.sampled.color - w.target;
            let g_color = r * (2.0 * inv);
            let (gx, gy) = (g_color.dot(&w.sampled.dx), g_color.dot(&w.sampled.dy));
            let iz = 1.0 / w.y.z;
            let g_y = Vec3::new(
                gx * intr.fx * iz,
                gy * intr.fy * iz,
                -(gx * intr.fx * w.y.x + gy * intr.fy * w.y.y) * iz * iz,
            );
            let rel = &state.relative[w.frame].pose;
            let g_zbar = g_y.dot(&(rel.rotation * w.a));
            let g_rot = g_y * w.a.transpose() * w.zbar;
            let ray_grad = (g_zbar != 0.0).then(|| {
                let up = RayUpstream {
                    depth: g_zbar,
                    ..Default::default()
                };
                w.sample.backward(field, &w.ray, &up)
            });
            (r.norm_squared() * inv, g_rot, g_y, ray_grad)
        })
        .collect();
    for (w, (value, g_rot, g_t, ray_grad)) in warps.iter().zip(grads) {
        out.value += value;
        out.grad.add_relative(w.frame, &g_rot, &g_t);
        if let Some(g) = ray_grad {
            out.grad.add_ray(w.frame, &g, &w.dir_cam);
            out.hits.extend(g.hits);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Se3Params};

    fn k() -> Intrinsics {
        Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn identity_pose_is_fixed_point() {
        let v = Vec2::new(12.0, 40.0);
        let w = reproject_pixel(&k(), &SE3Pose::identity(), &v, 3.7).unwrap();
        assert!((w.pixel - v).norm() < 1e-12);
        assert!((w.depth - 3.7).abs() < 1e-12);
    }

    #[test]
    fn forward_translation_on_axis() {
        let k = k();
        let rel = SE3Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let c = Vec2::new(k.cx, k.cy);
        let w = reproject_pixel(&k, &rel, &c, 4.0).unwrap();
        assert!((w.pixel - c).norm() < 1e-12);
        assert!((w.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lateral_translation_disparity() {
        let k = k();
        let b = 0.3;
        let rel = SE3Pose::from_translation(Vec3::new(-b, 0.0, 0.0));
        let v = Vec2::new(20.0, 10.0);
        let w = reproject_pixel(&k, &rel, &v, 6.0).unwrap();
        assert!((w.pixel.x - (v.x - k.fx * b / 6.0)).abs() < 1e-12);
        assert!((w.pixel.y - v.y).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_and_bad_depth() {
        let rel = SE3Pose::from_translation(Vec3::new(0.0, 0.0, -5.0));
        assert!(matches!(
            reproject_pixel(&k(), &rel, &Vec2::new(31.5, 23.5), 2.0),
            Err(Error::SingularProjection(_))
        ));
        assert!(matches!(reproject_pixel(&k(), &rel, &Vec2::new(3.0, 3.0), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn true_pose_and_depth_land_on_true_pixel() {
        let k = k();
        let rel = se3_exp(&Se3Params::from_array([0.05, -0.02, -0.5, 0.01, 0.03, -0.02]));
        let p = Vec3::new(0.8, -0.4, 7.5);
        let (v, z) = k.project(&p).unwrap();
        let (expected, z2) = k.project(&rel.transform_point(&p)).unwrap();
        let w = reproject_pixel(&k, &rel, &v, z).unwrap();
        assert!((w.pixel - expected).norm() < 1e-9);
        assert!((w.depth - z2).abs() < 1e-9);
    }
}
