//! Initial splats from LiDAR points: ground segmentation, two-resolution
//! voxel downsampling and nearest-neighbor normals.

use std::collections::BTreeMap;

use rstar::primitives::GeomWithData;
use rstar::RTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeomFitConfig, LidarFrame};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::splat::{Splat2D, SplatField};

/// Plane `n . x = d` with unit `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

/// RANSAC fit of the dominant plane whose normal lies within `max_tilt_deg`
/// of the sensor up axis. Returns the plane and an inlier mask, or `None`
/// when no admissible plane has at least three inliers.
pub fn ground_plane(
    points: &[Vec3],
    threshold: f64,
    iterations: usize,
    max_tilt_deg: f64,
    rng: &mut impl Rng,
) -> Option<(Plane, Vec<bool>)> {
    if points.len() < 3 {
        return None;
    }
    let cos_tilt = max_tilt_deg.to_radians().cos();
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..iterations {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let k = rng.gen_range(0..points.len());
        let n = (points[j] - points[i]).cross(&(points[k] - points[i]));
        if n.norm() < 1e-9 {
            continue;
        }
        let mut n = n.normalize();
        if n.z < 0.0 {
            n = -n;
        }
        if n.z < cos_tilt {
            continue;
        }
        let plane = Plane {
            normal: n,
            offset: n.dot(&points[i]),
        };
        let count = points.iter().filter(|p| plane.distance(p) <= threshold).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((plane, count));
        }
    }
    let (plane, count) = best?;
    if count < 3 {
        return None;
    }
    let mask = points.iter().map(|p| plane.distance(p) <= threshold).collect();
    Some((plane, mask))
}

/// Unit normals from a principal-component fit over the `k` nearest
/// neighbors, each turned to face the sensor origin. Points with fewer
/// than three neighbors get the direction back to the sensor.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Vec<Vec3> {
    let toward_sensor = |p: &Vec3| {
        let n = p.norm();
        if n > 0.0 {
            -p / n
        } else {
            Vec3::z()
        }
    };
    if points.len() < 3 {
        return points.iter().map(toward_sensor).collect();
    }
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i))
            .collect(),
    );
    let k = k.min(points.len()).max(3);
    points
        .iter()
        .map(|p| {
            let nbrs: Vec<usize> = tree.nearest_neighbor_iter(&[p.x, p.y, p.z]).take(k).map(|g| g.data).collect();
            let mean = nbrs.iter().map(|&i| points[i]).sum::<Vec3>() / nbrs.len() as f64;
            let mut cov = Mat3::zeros();
            for &i in &nbrs {
                let d = points[i] - mean;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let (imin, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned();
            if eig.eigenvalues.iter().filter(|&&v| v > 1e-12).count() < 2 {
                return toward_sensor(p);
            }
            if n.dot(p) > 0.0 {
                n = -n;
            }
            n.normalize()
        })
        .collect()
}

/// Mean distance from each point to its `k` nearest other points; zero
/// for a lone point.
pub fn sample_spacing(points: &[Vec3], k: usize) -> Vec<f64> {
    if points.len() < 2 {
        return vec![0.0; points.len()];
    }
    let tree = RTree::bulk_load(points.iter().map(|p| [p.x, p.y, p.z]).collect());
    points
        .iter()
        .map(|p| {
            let d: Vec<f64> = tree
                .nearest_neighbor_iter(&[p.x, p.y, p.z])
                .skip(1)
                .take(k)
                .map(|q| (Vec3::new(q[0], q[1], q[2]) - p).norm())
                .collect();
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect()
}

/// Initial splat scale: half the voxel, widened to the local sample
/// spacing where the cloud is sparser than the voxel grid so that
/// neighboring splats overlap.
pub fn initial_scale(voxel: f64, spacing: f64) -> f64 {
    let half = 0.5 * voxel;
    spacing.clamp(half, MAX_SCALE_VOXELS * half)
}

/// Upper bound on the initial scale, in half voxels.
pub const MAX_SCALE_VOXELS: f64 = 8.0;

/// Neighbors used for the local sample spacing.
pub const SPACING_NEIGHBORS: usize = 3;

/// Keeps, per voxel, the point nearest to the voxel's centroid. Output is
/// ordered by voxel key.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<usize> {
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64);
        cells.entry(key).or_default().push(i);
    }
    cells
        .values()
        .map(|idx| {
            let centroid = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
            *idx
                .iter()
                .min_by(|&&a, &&b| {
                    (points[a] - centroid)
                        .norm_squared()
                        .total_cmp(&(points[b] - centroid).norm_squared())
                })
                .unwrap()
        })
        .collect()
}

/// One splat per retained point of the aggregated world cloud.
pub fn seed_splats(frames: &[LidarFrame], cfg: &GeomFitConfig) -> Result<SplatField> {
    if frames.is_empty() {
        return Err(Error::Empty("no LiDAR frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut ground: (Vec<Vec3>, Vec<Vec3>) = Default::default();
    let mut other: (Vec<Vec3>, Vec<Vec3>) = Default::default();
    for f in frames {
        let mask = ground_plane(&f.points, cfg.ransac_threshold, cfg.ransac_iterations, cfg.ground_max_tilt_deg, &mut rng)
            .map(|(_, m)| m)
            .unwrap_or_else(|| vec![false; f.points.len()]);
        let to_world = f.pose.inverse();
        for (i, p) in f.points.iter().enumerate() {
            let dst = if mask[i] { &mut ground } else { &mut other };
            dst.0.push(to_world.transform_point(p));
            dst.1.push(to_world.rotate(&f.normals[i]));
        }
    }
    if ground.0.is_empty() && other.0.is_empty() {
        return Err(Error::Empty("LiDAR frames contain no points".into()));
    }
    let mut splats = Vec::new();
    for ((pts, normals), voxel) in [(ground, cfg.voxel_ground), (other, cfg.voxel_nonground)] {
        let spacing = sample_spacing(&pts, SPACING_NEIGHBORS);
        for i in voxel_downsample(&pts, voxel) {
            let s = initial_scale(voxel, spacing[i]);
            splats.push(Splat2D::oriented(
                pts[i],
                &normals[i],
                &Vec3::x(),
                [s, s],
                cfg.init_opacity,
                cfg.init_uncertainty,
            ));
        }
    }
    Ok(SplatField::new(splats))
}
