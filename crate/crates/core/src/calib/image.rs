use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Vec2, Vec3};

/// RGB raster with channel values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
}

/// Bilinear sample with its derivatives along x and y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub color: Vec3,
    pub dx: Vec3,
    pub dy: Vec3,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<Vec3>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Domain(format!("{} pixels for a {width}x{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Vec3) {
        self.data[y * self.width + x] = c;
    }

    /// True when bilinear sampling is defined, i.e. the coordinate lies
    /// between the outermost pixel centers.
    pub fn can_sample(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Interpolates the four surrounding pixels; exact at pixel centers.
    pub fn bilinear(&self, p: &Vec2) -> Option<Sample> {
        if !self.can_sample(p) || self.width < 2 || self.height < 2 {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width - 2);
        let y0 = (p.y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (p.x - x0 as f64, p.y - y0 as f64);
        let (c00, c10) = (self.get(x0, y0), self.get(x0 + 1, y0));
        let (c01, c11) = (self.get(x0, y0 + 1), self.get(x0 + 1, y0 + 1));
        let top = c00 * (1.0 - fx) + c10 * fx;
        let bottom = c01 * (1.0 - fx) + c11 * fx;
        Some(Sample {
            color: top * (1.0 - fy) + bottom * fy,
            dx: (c10 - c00) * (1.0 - fy) + (c11 - c01) * fy,
            dy: bottom - top,
        })
    }

    pub fn check_matches(&self, intr: &Intrinsics) -> Result<()> {
        if self.width != intr.width || self.height != intr.height {
            return Err(Error::Config(format!(
                "image is {}x{} but intrinsics expect {}x{}",
                self.width, self.height, intr.width, intr.height
            )));
        }
        Ok(())
    }
}

/// A camera image paired with the LiDAR frame captured at the same time.
#[derive(Clone, Debug)]
pub struct CameraFrame {
    pub image: Image,
    pub lidar_index: usize,
}
