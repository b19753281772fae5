use rayon::prelude::*;

use super::{composite, DepthMode, PreparedField};
use crate::geometry::{pixel_ray, Intrinsics, SE3Pose, Vec2, Vec3};

/// Per-pixel blended outputs on a strided pixel grid, row-major.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub color: Vec<Vec3>,
    pub depth: Vec<Option<f64>>,
    pub error: Vec<f64>,
    pub weight: Vec<f64>,
}

impl RenderedView {
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Image coordinate of a grid cell.
    pub fn pixel(&self, col: usize, row: usize) -> Vec2 {
        Vec2::new((col * self.stride) as f64, (row * self.stride) as f64)
    }
}

/// Renders every `stride`-th pixel of a camera view. A `stride` of zero is
/// treated as one.
pub fn render_view(field: &PreparedField, intr: &Intrinsics, world_to_cam: &SE3Pose, stride: usize) -> RenderedView {
    let stride = stride.max(1);
    let width = intr.width.div_ceil(stride);
    let height = intr.height.div_ceil(stride);
    let mode = DepthMode::camera(world_to_cam);
    let rows: Vec<Vec<_>> = (0..height)
        .into_par_iter()
        .map(|row| {
            (0..width)
                .map(|col| {
                    let px = Vec2::new((col * stride) as f64, (row * stride) as f64);
                    let ray = pixel_ray(intr, world_to_cam, &px).expect("grid pixel inside image");
                    let s = composite(field, &ray, &mode);
                    (s.color, s.depth, s.error, s.weight_sum)
                })
                .collect()
        })
        .collect();
    let mut out = RenderedView {
        width,
        height,
        stride,
        color: Vec::with_capacity(width * height),
        depth: Vec::with_capacity(width * height),
        error: Vec::with_capacity(width * height),
        weight: Vec::with_capacity(width * height),
    };
    for (c, d, e, w) in rows.into_iter().flatten() {
        out.color.push(c);
        out.depth.push(d);
        out.error.push(e);
        out.weight.push(w);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{composite_ray, Splat2D, SplatField};

    fn intr() -> Intrinsics {
        Intrinsics::new(48.0, 48.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn empty_field_renders_background() {
        let v = render_view(&SplatField::default().prepare(), &intr(), &SE3Pose::identity(), 4);
        assert_eq!((v.width, v.height), (16, 12));
        assert!(v.weight.iter().all(|&w| w == 0.0));
        assert!(v.color.iter().all(|c| *c == Vec3::zeros()));
    }

    #[test]
    fn principal_pixel_sees_splat_depth() {
        let k = Intrinsics::new(48.0, 48.0, 32.0, 24.0, 64, 48).unwrap();
        let mut s = Splat2D::oriented(Vec3::new(0.0, 0.0, 3.0), &Vec3::z(), &Vec3::x(), [0.5, 0.5], 0.5, 0.05);
        s.opacity_logit = 40.0;
        let v = render_view(&SplatField::new(vec![s]).prepare(), &k, &SE3Pose::identity(), 1);
        let d = v.depth[v.index(32, 24)].unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_single_ray_calls() {
        let splats = (0..6)
            .map(|i| {
                let mut s = Splat2D::oriented(
                    Vec3::new(0.2 * i as f64 - 0.5, 0.1, 2.0 + 0.3 * i as f64),
                    &Vec3::new(0.1, 0.2, 1.0),
                    &Vec3::x(),
                    [0.4, 0.3],
                    0.6,
                    0.05,
                );
                s.color = Vec3::new(0.1 * i as f64, 0.5, 0.9);
                s
            })
            .collect();
        let field = SplatField::new(splats);
        let pose = crate::geometry::se3_exp(&crate::Se3Params::from_array([0.1, -0.05, 0.2, 0.02, -0.03, 0.01]));
        let v = render_view(&field.prepare(), &intr(), &pose, 3);
        for row in 0..v.height {
            for col in 0..v.width {
                let ray = pixel_ray(&intr(), &pose, &v.pixel(col, row)).unwrap();
                let s = composite_ray(&field, &ray, &pose);
                let i = v.index(col, row);
                assert_eq!(v.color[i], s.color);
                assert_eq!(v.depth[i], s.depth);
                assert_eq!(v.weight[i], s.weight_sum);
            }
        }
    }
}
