//! Dataset directory: scans, poses, images, correspondences, extrinsic
//! files and a run config pointing at them.

use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::formats::{
    read_correspondences, read_points, read_poses, write_correspondences, write_extrinsic, write_points, write_poses,
    PointFormat,
};
use super::ppm::{read_ppm, write_ppm};
use super::write_bytes;
use crate::calib::{CalibInputs, CameraFrame, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::geometry::{se3_log, SE3Pose, Se3Params};
use crate::geomfit::LidarFrame;
use crate::synth::Dataset;

pub const DATASET_LAYOUT: &str = "\
config.cfg            run config (desk profile)
velodyne/NNNNNN.bin   one KITTI scan per frame, LiDAR frame
poses.txt             LiDAR-to-world 3x4 per scan
image/NNNNNN.ppm      camera image taken with scan NNNNNN
correspondences.txt   n n+1 x1 y1 x2 y2
extrinsic_init.txt    initial LiDAR-to-camera estimate
extrinsic_gt.txt      ground truth";

/// Writes `data` in the layout above; the config starts from `initial`.
pub fn write_dataset(dir: &Path, data: &Dataset, initial: &Se3Params, seed: u64) -> Result<PathBuf> {
    for (i, f) in data.lidar.iter().enumerate() {
        write_points(&dir.join(format!("velodyne/{i:06}.bin")), &f.points, PointFormat::KittiBin)?;
    }
    let to_world: Vec<SE3Pose> = data.rig.lidar_poses.iter().map(|p| p.inverse()).collect();
    write_poses(&dir.join("poses.txt"), &to_world)?;
    for (i, c) in data.cameras.iter().enumerate() {
        write_ppm(&dir.join(format!("image/{i:06}.ppm")), &c.image)?;
    }
    write_correspondences(&dir.join("correspondences.txt"), &data.correspondences)?;
    write_extrinsic(&dir.join("extrinsic_init.txt"), initial)?;
    write_extrinsic(&dir.join("extrinsic_gt.txt"), &se3_log(&data.rig.extrinsic))?;
    let k = &data.rig.intrinsics;
    let cfg = format!(
        "profile = desk\nseed = {seed}\n\ndata.clouds = velodyne\ndata.cloud_format = kitti-bin\ndata.poses = poses.txt\n\
data.images = image\ndata.correspondences = correspondences.txt\noutput.dir = out\n\n\
extrinsic.init = extrinsic_init.txt\nextrinsic.gt = extrinsic_gt.txt\n\n\
camera.fx = {}\ncamera.fy = {}\ncamera.cx = {}\ncamera.cy = {}\ncamera.width = {}\ncamera.height = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    let path = dir.join("config.cfg");
    write_bytes(&path, cfg.as_bytes())?;
    Ok(path)
}

/// Inputs read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub lidar: Vec<LidarFrame>,
    /// World-to-LiDAR, per scan.
    pub lidar_poses: Vec<SE3Pose>,
    pub cameras: Vec<CameraFrame>,
    pub correspondences: CorrespondenceSet,
}

impl LoadedDataset {
    pub fn inputs<'a>(&'a self, cfg: &'a RunConfig) -> CalibInputs<'a> {
        CalibInputs {
            frames: &self.cameras,
            lidar_poses: &self.lidar_poses,
            correspondences: &self.correspondences,
            intrinsics: &cfg.intrinsics,
        }
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<LoadedDataset> {
    let ext = match cfg.cloud_format {
        PointFormat::KittiBin => "bin",
        PointFormat::AsciiXyz => "xyz",
    };
    let scans = sorted_files(&cfg.clouds, ext)?;
    let lidar_poses: Vec<SE3Pose> = read_poses(&cfg.poses)?.iter().map(|p| p.inverse()).collect();
    if scans.len() != lidar_poses.len() {
        return Err(Error::Config(format!("{} scans but {} poses", scans.len(), lidar_poses.len())));
    }
    let lidar = scans
        .iter()
        .zip(&lidar_poses)
        .map(|(p, pose)| LidarFrame::new(read_points(p, cfg.cloud_format)?, *pose))
        .collect::<Result<Vec<_>>>()?;
    let images = sorted_files(&cfg.images, "ppm")?;
    if images.len() > lidar.len() {
        return Err(Error::Config(format!("{} images but only {} scans", images.len(), lidar.len())));
    }
    let cameras = images
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let image = read_ppm(p)?;
            image.check_matches(&cfg.intrinsics)?;
            Ok(CameraFrame { image, lidar_index: i })
        })
        .collect::<Result<Vec<_>>>()?;
    let correspondences = match &cfg.correspondences {
        Some(p) => read_correspondences(p)?,
        None => CorrespondenceSet::default(),
    };
    Ok(LoadedDataset {
        lidar,
        lidar_poses,
        cameras,
        correspondences,
    })
}
