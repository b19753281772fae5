//! Procedural scenes built from textured rectangles.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Ray, Vec3};

/// Procedural surface color as a function of in-plane coordinates (m).
#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    Checker { cell: f64, dark: Vec3, light: Vec3 },
    /// Linear blend along the first in-plane axis.
    Gradient { from: Vec3, to: Vec3, length: f64 },
    /// Two octaves of smooth value noise, independent per channel.
    Noise { seed: u64, cell: f64 },
}

fn hash(seed: u64, x: i64, y: i64, ch: u64) -> f64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ ch.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f64, y: f64, ch: u64) -> f64 {
    let (ix, iy) = (x.floor(), y.floor());
    let (fx, fy) = (smooth(x - ix), smooth(y - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = hash(seed, ix, iy, ch);
    let v10 = hash(seed, ix + 1, iy, ch);
    let v01 = hash(seed, ix, iy + 1, ch);
    let v11 = hash(seed, ix + 1, iy + 1, ch);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

impl Texture {
    pub fn color(&self, a: f64, b: f64) -> Vec3 {
        match self {
            Texture::Checker { cell, dark, light } => {
                let parity = ((a / cell).floor() as i64 + (b / cell).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    *dark
                } else {
                    *light
                }
            }
            Texture::Gradient { from, to, length } => {
                let t = (a / length).clamp(0.0, 1.0);
                from * (1.0 - t) + to * t
            }
            Texture::Noise { seed, cell } => Vec3::from_fn(|ch, _| {
                let (x, y) = (a / cell, b / cell);
                let v = (2.0 * value_noise(*seed, x, y, ch as u64) + value_noise(*seed ^ 0xABCD, 2.0 * x, 2.0 * y, ch as u64))
                    / 3.0;
                0.1 + 0.8 * v
            }),
        }
    }
}

/// Rectangle `center + a * axis_u + b * axis_v` with `|a| <= half[0]`,
/// `|b| <= half[1]`; visible from both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub center: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub half: [f64; 2],
    pub texture: Texture,
}

impl Surface {
    pub fn normal(&self) -> Vec3 {
        self.axis_u.cross(&self.axis_v)
    }

    /// Ray parameter and in-plane coordinates of the hit.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64, f64)> {
        let n = self.normal();
        let den = ray.direction.dot(&n);
        if den.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - ray.origin).dot(&n) / den;
        if t <= 1e-9 {
            return None;
        }
        let r = ray.at(t) - self.center;
        let (a, b) = (r.dot(&self.axis_u), r.dot(&self.axis_v));
        (a.abs() <= self.half[0] && b.abs() <= self.half[1]).then_some((t, a, b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenePreset {
    /// Two walls, a floor and three oblique panels.
    Corridor,
    /// One large textured plane facing the sensor.
    FrontoPlane,
    /// A small square in front of a larger background plane.
    TwoPlane,
}

impl FromStr for ScenePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(ScenePreset::Corridor),
            "fronto-plane" | "fronto_plane" => Ok(ScenePreset::FrontoPlane),
            "two-plane" | "two_plane" => Ok(ScenePreset::TwoPlane),
            other => Err(Error::Config(format!("unknown scene preset '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenePreset::Corridor => "corridor",
            ScenePreset::FrontoPlane => "fronto-plane",
            ScenePreset::TwoPlane => "two-plane",
        })
    }
}

/// Static scene. The world frame has x forward, y left and z up; sensors
/// start near the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
}

/// Surface hit by a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneHit {
    pub t: f64,
    pub surface: usize,
    pub point: Vec3,
    pub color: Vec3,
}

impl Scene {
    pub fn new(surfaces: Vec<Surface>) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::Domain("scene needs at least one surface".into()));
        }
        for (i, s) in surfaces.iter().enumerate() {
            let area = 4.0 * s.half[0] * s.half[1];
            let orthonormal = (s.axis_u.norm() - 1.0).abs() < 1e-9
                && (s.axis_v.norm() - 1.0).abs() < 1e-9
                && s.axis_u.dot(&s.axis_v).abs() < 1e-9;
            if !(area > 1e-12) || !orthonormal {
                return Err(Error::Domain(format!("surface {i} is degenerate")));
            }
        }
        Ok(Self { surfaces })
    }

    /// Closest hit.
    pub fn intersect(&self, ray: &Ray) -> Option<SceneHit> {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, a, b)) = s.intersect(ray) {
                if best.is_none_or(|(bt, ..)| t < bt) {
                    best = Some((t, i, a, b));
                }
            }
        }
        best.map(|(t, i, a, b)| SceneHit {
            t,
            surface: i,
            point: ray.at(t),
            color: self.surfaces[i].texture.color(a, b),
        })
    }
}

/// Axis pair for a vertical rectangle whose horizontal axis has the given
/// heading (radians about z), tilted by `pitch` about that axis.
fn vertical_axes(yaw: f64, pitch: f64) -> (Vec3, Vec3) {
    let u = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let v = so3_exp(&(u * pitch)) * Vec3::z();
    (u, v)
}

/// Builds a preset scene; `seed` drives the noise textures.
pub fn make_scene(preset: ScenePreset, seed: u64) -> Result<Scene> {
    let noise = |k: u64, cell: f64| Texture::Noise {
        seed: seed.wrapping_mul(31).wrapping_add(k),
        cell,
    };
    let floor_z = -1.7;
    let surfaces = match preset {
        ScenePreset::Corridor => {
            let (len_mid, len_half) = (17.5, 27.5);
            let panel = |k: u64, center: Vec3, yaw: f64, pitch: f64, half: [f64; 2]| {
                let (u, v) = vertical_axes(yaw, pitch);
                Surface {
                    center,
                    axis_u: u,
                    axis_v: v,
                    half,
                    texture: noise(k, 0.4),
                }
            };
            vec![
                Surface {
                    center: Vec3::new(len_mid, 0.0, floor_z),
                    axis_u: Vec3::x(),
                    axis_v: Vec3::y(),
                    half: [len_half, 4.0],
                    texture: noise(1, 0.6),
                },
                Surface {
                    center: Vec3::new(len_mid, 4.0, floor_z + 2.0),
                    axis_u: Vec3::x(),
                    axis_v: Vec3::z(),
                    half: [len_half, 2.0],
                    texture: noise(2, 0.5),
                },
                Surface {
                    center: Vec3::new(len_mid, -4.0, floor_z + 2.0),
                    axis_u: Vec3::x(),
                    axis_v: Vec3::z(),
                    half: [len_half, 2.0],
                    texture: noise(3, 0.5),
                },
                panel(4, Vec3::new(15.0, 1.6, -0.4), 2.2, 0.0, [1.6, 1.3]),
                panel(5, Vec3::new(19.0, -1.8, -0.2), 1.0, 0.15, [1.5, 1.5]),
                panel(6, Vec3::new(25.0, 0.3, 0.0), 1.9, -0.2, [2.0, 1.7]),
            ]
        }
        ScenePreset::FrontoPlane => vec![Surface {
            center: Vec3::new(30.0, 0.0, 0.0),
            axis_u: Vec3::y(),
            axis_v: Vec3::z(),
            half: [22.0, 16.0],
            texture: noise(7, 1.2),
        }],
        ScenePreset::TwoPlane => vec![
            Surface {
                center: Vec3::new(6.0, 0.0, 0.0),
                axis_u: Vec3::y(),
                axis_v: Vec3::z(),
                half: [0.8, 0.8],
                texture: noise(8, 0.3),
            },
            Surface {
                center: Vec3::new(10.0, 0.0, 0.0),
                axis_u: Vec3::y(),
                axis_v: Vec3::z(),
                half: [6.0, 4.0],
                texture: noise(9, 0.5),
            },
        ],
    };
    Scene::new(surfaces)
}
