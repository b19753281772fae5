use nalgebra::Vector2;

use super::se3::{SE3Pose, Vec3};
use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Depths closer to zero than this cannot be projected.
pub const SINGULAR_DEPTH: f64 = 1e-12;

/// Pinhole intrinsics. Image coordinate `(i, j)` is the center of raster
/// pixel column `i`, row `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid intrinsics {self:?}")))
        }
    }

    /// `K^-1 (x, y, 1)^T`, a camera-space direction with unit z.
    pub fn backproject(&self, pixel: &Vec2) -> Vec3 {
        Vec3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Camera-space point to image coordinates and depth.
    pub fn project(&self, p_cam: &Vec3) -> Result<(Vec2, f64)> {
        let z = p_cam.z;
        if z.abs() <= SINGULAR_DEPTH {
            return Err(Error::SingularProjection(z));
        }
        Ok((
            Vec2::new(
                self.fx * p_cam.x / z + self.cx,
                self.fy * p_cam.y / z + self.cy,
            ),
            z,
        ))
    }

    /// True when the coordinate lies within the image rectangle, pixel
    /// footprints included.
    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x <= self.width as f64 - 0.5
            && pixel.y <= self.height as f64 - 0.5
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }
}

/// World-space ray through an image coordinate for a world-to-camera pose.
pub fn pixel_ray(intr: &Intrinsics, world_to_cam: &SE3Pose, pixel: &Vec2) -> Result<Ray> {
    if !intr.contains(pixel) {
        return Err(Error::Domain(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel.x, pixel.y, intr.width, intr.height
        )));
    }
    let dir_cam = intr.backproject(pixel);
    Ok(Ray::new(
        world_to_cam.center(),
        world_to_cam.rotation.transpose() * dir_cam,
    ))
}

/// Projects a world point; the returned depth may be negative (behind the
/// camera) and is left to the caller to cull.
pub fn project_point(intr: &Intrinsics, world_to_cam: &SE3Pose, p_world: &Vec3) -> Result<(Vec2, f64)> {
    intr.project(&world_to_cam.transform_point(p_world))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3::{se3_exp, Se3Params};
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics::new(50.0, 55.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn principal_ray() {
        let k = intr();
        let r = pixel_ray(&k, &SE3Pose::identity(), &Vec2::new(k.cx, k.cy)).unwrap();
        assert_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(r.origin, Vec3::zeros());
    }

    #[test]
    fn ray_half_focal_length_right() {
        let k = intr();
        let r = pixel_ray(&k, &SE3Pose::identity(), &Vec2::new(k.cx + 0.5 * k.fx, k.cy)).unwrap();
        let expected = Vec3::new(0.5, 0.0, 1.0).normalize();
        assert!((r.direction - expected).norm() < 1e-15);
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        let k = intr();
        assert!(matches!(
            pixel_ray(&k, &SE3Pose::identity(), &Vec2::new(-1.0, 3.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn projection_cases() {
        let k = intr();
        let (px, z) = project_point(&k, &SE3Pose::identity(), &Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((px, z), (Vec2::new(k.cx, k.cy), 5.0));
        let (_, z) = project_point(&k, &SE3Pose::identity(), &Vec3::new(0.3, 0.1, -2.0)).unwrap();
        assert!(z < 0.0);
        assert!(matches!(
            project_point(&k, &SE3Pose::identity(), &Vec3::new(1.0, 1.0, 0.0)),
            Err(Error::SingularProjection(_))
        ));
    }

    proptest! {
        #[test]
        fn backprojection_roundtrip(
            x in -0.5f64..63.5, y in -0.5f64..47.5, depth in 0.1f64..100.0,
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let k = intr();
            let pose = se3_exp(&Se3Params::from_array([tx, ty, tz, a, b, c]));
            let px = Vec2::new(x, y);
            let ray = pixel_ray(&k, &pose, &px).unwrap();
            // depth is the camera z coordinate: scale the unit ray accordingly
            let cam_dir = pose.rotate(&ray.direction);
            let p = ray.at(depth / cam_dir.z);
            let (back, z) = project_point(&k, &pose, &p).unwrap();
            prop_assert!((back - px).norm() < 1e-9);
            prop_assert!((z - depth).abs() < 1e-9);
        }
    }
}
