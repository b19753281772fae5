//! File formats: point clouds, pose lists, PPM images, extrinsic and
//! correspondence files, flat run configs and the dataset directory layout.

mod config;
mod dataset;
mod formats;
mod ppm;

pub use config::{parse_config, read_config, RunConfig};
pub use dataset::{load_dataset, write_dataset, LoadedDataset, DATASET_LAYOUT};
pub use formats::{
    read_correspondences, read_extrinsic, read_kitti_records, read_points, read_poses, write_correspondences,
    write_extrinsic, write_kitti_records, write_points, write_poses, PointFormat,
};
pub use ppm::{read_ppm, scalar_image, write_ppm};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated floats of a line, in order.
pub(crate) fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("not a number: {tok:?}")))
        })
        .collect()
}

/// Non-empty lines that are not `#` comments, with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}
