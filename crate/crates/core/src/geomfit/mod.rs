//! Fitting splat geometry and depth uncertainty to LiDAR frames.

mod loss;
mod seed;

pub use loss::{geometric_loss, GeomLoss, GeomWeights};
pub use seed::{
    estimate_normals, ground_plane, initial_scale, sample_spacing, seed_splats, voxel_downsample, Plane, MAX_SCALE_VOXELS,
    SPACING_NEIGHBORS,
};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Ray, SE3Pose, Vec3};
use crate::optim::{Adam, AdamConfig};
use crate::splat::{param, Splat2D, SplatField};

/// Nearest neighbors used for point normals.
pub const NORMAL_NEIGHBORS: usize = 16;

/// One LiDAR scan in its sensor frame.
#[derive(Clone, Debug)]
pub struct LidarFrame {
    pub points: Vec<Vec3>,
    /// World-to-LiDAR transform.
    pub pose: SE3Pose,
    /// Unit normals in the sensor frame, facing the sensor.
    pub normals: Vec<Vec3>,
    /// Mean distance to the nearest neighbors within the scan.
    pub spacing: Vec<f64>,
}

/// A LiDAR return as a world-space ray.
#[derive(Clone, Copy, Debug)]
pub struct LidarRay {
    pub ray: Ray,
    pub range: f64,
    /// World-space point normal, facing the sensor.
    pub normal: Vec3,
    pub spacing: f64,
}

impl LidarFrame {
    /// Builds a frame and estimates point normals.
    pub fn new(points: Vec<Vec3>, pose: SE3Pose) -> Result<Self> {
        let normals = estimate_normals(&points, NORMAL_NEIGHBORS);
        Self::with_normals(points, pose, normals)
    }

    pub fn with_normals(points: Vec<Vec3>, pose: SE3Pose, normals: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("LiDAR frame has no points".into()));
        }
        if normals.len() != points.len() {
            return Err(Error::Domain(format!("{} normals for {} points", normals.len(), points.len())));
        }
        if !pose.is_valid(1e-6) {
            return Err(Error::Domain("LiDAR pose is not a rigid transform".into()));
        }
        let spacing = sample_spacing(&points, SPACING_NEIGHBORS);
        Ok(Self {
            points,
            pose,
            normals,
            spacing,
        })
    }

    /// Sensor position in world coordinates.
    pub fn origin(&self) -> Vec3 {
        self.pose.center()
    }

    /// Rays for every point with nonzero range.
    pub fn rays(&self) -> Vec<LidarRay> {
        let o = self.origin();
        let rt = self.pose.rotation.transpose();
        self.points
            .iter()
            .zip(&self.normals)
            .zip(&self.spacing)
            .filter(|((p, _), _)| p.norm() > 0.0)
            .map(|((p, n), s)| LidarRay {
                ray: Ray::new(o, rt * p),
                range: p.norm(),
                normal: rt * n,
                spacing: *s,
            })
            .collect()
    }

    pub fn world_points(&self) -> Vec<Vec3> {
        let inv = self.pose.inverse();
        self.points.iter().map(|p| inv.transform_point(p)).collect()
    }
}

pub fn all_rays(frames: &[LidarFrame]) -> Vec<LidarRay> {
    frames.iter().flat_map(|f| f.rays()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeomFitConfig {
    pub lambda_dist: f64,
    pub lambda_norm: f64,
    /// Depth gap that triggers a new splat, in meters.
    pub theta1: f64,
    pub iters: usize,
    pub voxel_ground: f64,
    pub voxel_nonground: f64,
    pub batch_rays: usize,
    pub adapt_every: usize,
    pub adapt_until: usize,
    pub prune_opacity: f64,
    pub init_opacity: f64,
    pub init_uncertainty: f64,
    /// Position step per unit of scene extent.
    pub lr_position: f64,
    /// Ratio of the final to the initial position step.
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_uncertainty: f64,
    pub adam: AdamConfig,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub ground_max_tilt_deg: f64,
    pub seed: u64,
}

impl Default for GeomFitConfig {
    fn default() -> Self {
        Self {
            lambda_dist: 1e4,
            lambda_norm: 0.1,
            theta1: 0.5,
            iters: 15000,
            voxel_ground: 0.5,
            voxel_nonground: 0.15,
            batch_rays: 65536,
            adapt_every: 500,
            adapt_until: 10000,
            prune_opacity: 0.005,
            init_opacity: 0.5,
            init_uncertainty: 0.05,
            lr_position: 1.6e-4,
            lr_position_final: 0.01,
            lr_rotation: 5e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_uncertainty: 1e-2,
            adam: AdamConfig::default(),
            ransac_threshold: 0.15,
            ransac_iterations: 200,
            ground_max_tilt_deg: 30.0,
            seed: 0,
        }
    }
}

impl GeomFitConfig {
    /// Reduced iteration count and batch for small synthetic scenes.
    pub fn desk() -> Self {
        Self {
            iters: 1000,
            batch_rays: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_dist", self.lambda_dist),
            ("lambda_norm", self.lambda_norm),
            ("theta1", self.theta1),
            ("voxel_ground", self.voxel_ground),
            ("voxel_nonground", self.voxel_nonground),
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_uncertainty", self.lr_uncertainty),
            ("ransac_threshold", self.ransac_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("geom.{name} must be positive, got {v}")));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::Config("geom.init_opacity must lie in (0, 1)".into()));
        }
        if self.batch_rays == 0 || self.adapt_every == 0 {
            return Err(Error::Config("geom.batch_rays and geom.adapt_every must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> GeomWeights {
        GeomWeights::new(self.lambda_dist, self.lambda_norm)
    }
}

/// Adds one splat per LiDAR ray whose point lies more than `theta1` in
/// front of the rendered surface. A ray that hits nothing renders as
/// infinitely far background and triggers as well. New splats face the
/// sensor and take their scale from the scan's sample spacing; at most one is added per fine voxel.
pub fn adapt_splats(field: &mut SplatField, rays: &[LidarRay], cfg: &GeomFitConfig) -> usize {
    let prepared = field.prepare();
    let samples = loss::cast_lidar(&prepared, rays);
    let mut used = HashSet::new();
    let mut added = 0;
    for (r, s) in rays.iter().zip(&samples) {
        let trigger = match s.depth {
            Some(z) if s.covered() => z - r.range > cfg.theta1,
            _ => true,
        };
        if !trigger {
            continue;
        }
        let p = r.ray.at(r.range);
        let key = (p / cfg.voxel_nonground).map(|v| v.floor() as i64);
        if !used.insert((key.x, key.y, key.z)) {
            continue;
        }
        let s = initial_scale(cfg.voxel_nonground, r.spacing);
        field.splats.push(Splat2D::oriented(
            p,
            &-r.ray.direction,
            &Vec3::z(),
            [s, s],
            cfg.init_opacity,
            cfg.init_uncertainty,
        ));
        added += 1;
    }
    added
}

/// Removes splats below the opacity floor; returns the keep mask.
pub fn prune_splats(field: &mut SplatField, min_opacity: f64) -> Vec<bool> {
    let keep: Vec<bool> = field.splats.iter().map(|s| s.opacity() >= min_opacity).collect();
    let mut it = keep.iter();
    field.splats.retain(|_| *it.next().unwrap());
    keep
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitLogEntry {
    pub iteration: usize,
    pub loss: GeomLoss,
    pub splats: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub log: Vec<FitLogEntry>,
    pub added: usize,
    pub pruned: usize,
}

impl FitReport {
    /// Comma-separated progress log, one line per logged iteration.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,depth,uncertainty,distortion,normal,total,splats\n");
        for e in &self.log {
            let l = &e.loss;
            let _ = writeln!(
                s,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                e.iteration, l.depth, l.uncertainty, l.distortion, l.normal, l.total, e.splats
            );
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

fn scene_extent(frames: &[LidarFrame]) -> f64 {
    let origins: Vec<Vec3> = frames.iter().map(|f| f.origin()).collect();
    let mean = origins.iter().sum::<Vec3>() / origins.len() as f64;
    let radius = origins.iter().map(|o| (o - mean).norm()).fold(0.0, f64::max);
    (1.1 * radius).max(1.0)
}

fn flatten(field: &SplatField) -> Vec<f64> {
    field.splats.iter().flat_map(|s| s.to_raw()).collect()
}

fn unflatten(field: &mut SplatField, params: &[f64]) {
    for (s, chunk) in field.splats.iter_mut().zip(params.chunks_exact(param::COUNT)) {
        *s = Splat2D::from_raw(chunk.try_into().unwrap());
    }
}

/// Seeds splats from the frames and optimizes their geometry. The
/// returned field has `frozen_geometry` set.
pub fn fit_geometry(frames: &[LidarFrame], cfg: &GeomFitConfig) -> Result<(SplatField, FitReport)> {
    cfg.validate()?;
    let field = seed_splats(frames, cfg)?;
    fit_geometry_from(field, frames, cfg)
}

/// Optimizes an existing field against the frames.
pub fn fit_geometry_from(mut field: SplatField, frames: &[LidarFrame], cfg: &GeomFitConfig) -> Result<(SplatField, FitReport)> {
    let rays = all_rays(frames);
    if rays.is_empty() {
        return Err(Error::Empty("no LiDAR rays".into()));
    }
    let mut report = FitReport::default();
    let extent = scene_extent(frames);
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(field.len() * param::COUNT, cfg.adam);
    let mut batch = Vec::with_capacity(cfg.batch_rays);

    for it in 0..cfg.iters {
        batch.clear();
        if cfg.batch_rays >= rays.len() {
            batch.extend_from_slice(&rays);
        } else {
            batch.extend((0..cfg.batch_rays).map(|_| rays[rng.gen_range(0..rays.len())]));
        }
        let prepared = field.prepare();
        let (loss, grad) = geometric_loss(&prepared, &batch, &weights);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "geometry fit at iteration {it}: {loss:?}, {} splats",
                field.len()
            )));
        }
        if it % 100 == 0 || it + 1 == cfg.iters {
            report.log.push(FitLogEntry {
                iteration: it,
                loss,
                splats: field.len(),
            });
            log::debug!("geom it {it}: total {:.5} depth {:.5} splats {}", loss.total, loss.depth, field.len());
        }

        let progress = it as f64 / cfg.iters.max(1) as f64;
        let lr_pos = cfg.lr_position * extent * cfg.lr_position_final.powf(progress);
        let rates = {
            let mut r = [0.0; param::COUNT];
            r[param::CENTER..param::CENTER + 3].fill(lr_pos);
            r[param::ROTATION..param::ROTATION + 4].fill(cfg.lr_rotation);
            r[param::LOG_SCALE..param::LOG_SCALE + 2].fill(cfg.lr_scale);
            r[param::OPACITY] = cfg.lr_opacity;
            r[param::UNCERTAINTY] = cfg.lr_uncertainty;
            r
        };
        let mut params = flatten(&field);
        adam.step(&mut params, &grad, |i| rates[i % param::COUNT]);
        unflatten(&mut field, &params);

        let done = it + 1;
        if done % cfg.adapt_every == 0 && done <= cfg.adapt_until && done < cfg.iters {
            let keep = prune_splats(&mut field, cfg.prune_opacity);
            report.pruned += keep.iter().filter(|k| !**k).count();
            adam.retain_blocks(param::COUNT, &keep);
            let added = adapt_splats(&mut field, &rays, cfg);
            report.added += added;
            adam.grow(added * param::COUNT);
        }
    }
    field.frozen_geometry = true;
    Ok((field, report))
}
