//! Flat `key = value` run configuration. Sections are dotted prefixes;
//! `#` starts a comment. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::formats::{read_extrinsic, PointFormat};
use super::{content_lines, read_text};
use crate::calib::CalibConfig;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Se3Params};
use crate::geomfit::GeomFitConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Directory of LiDAR scans, read in file-name order.
    pub clouds: PathBuf,
    pub cloud_format: PointFormat,
    /// LiDAR-to-world poses, one line per scan.
    pub poses: PathBuf,
    /// Directory of PPM images; image `i` was taken with scan `i`.
    pub images: PathBuf,
    pub correspondences: Option<PathBuf>,
    /// Fitted splat checkpoint to calibrate against instead of fitting.
    pub geometry: Option<PathBuf>,
    pub output: PathBuf,
    pub intrinsics: Intrinsics,
    pub initial: Se3Params,
    pub ground_truth: Option<Se3Params>,
    pub geom: GeomFitConfig,
    pub calib: CalibConfig,
    pub seed: u64,
}

impl RunConfig {
    /// Overrides the global seed of both stages.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.geom.seed = seed;
        self.calib.seed = seed;
    }
}

fn value<T: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid value {v:?} for {key}")))
}

fn list<T: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| value(path, line, key, s.trim())).collect()
}

fn bool_value(path: &Path, line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::parse(path, line, format!("invalid boolean {v:?} for {key}"))),
    }
}

fn set_geom(g: &mut GeomFitConfig, key: &str, v: &str, path: &Path, n: usize) -> Result<bool> {
    macro_rules! num {
        ($($name:ident),*) => {
            match key {
                $(stringify!($name) => { g.$name = value(path, n, key, v)?; return Ok(true); })*
                _ => {}
            }
        };
    }
    num!(
        lambda_dist, lambda_norm, theta1, iters, voxel_ground, voxel_nonground, batch_rays, adapt_every,
        adapt_until, prune_opacity, init_opacity, init_uncertainty, lr_position, lr_position_final, lr_rotation,
        lr_scale, lr_opacity, lr_uncertainty, ransac_threshold, ransac_iterations, ground_max_tilt_deg
    );
    match key {
        "adam_beta1" => g.adam.beta1 = value(path, n, key, v)?,
        "adam_beta2" => g.adam.beta2 = value(path, n, key, v)?,
        "adam_eps" => g.adam.eps = value(path, n, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_calib(c: &mut CalibConfig, key: &str, v: &str, path: &Path, n: usize) -> Result<bool> {
    macro_rules! num {
        ($($name:ident),*) => {
            match key {
                $(stringify!($name) => { c.$name = value(path, n, key, v)?; return Ok(true); })*
                _ => {}
            }
        };
    }
    num!(
        lambda_t, lambda_r, tukey_c, theta2, iters, lr_rotation, lr_translation, lr_rotation_fine,
        lr_translation_fine, lr_color, schedule_window, rotation_settle_deg, photometric_batch,
        reprojection_batch, triangulation_batch, degenerate_warn_fraction, degenerate_window, log_every,
        average_last
    );
    match key {
        "halving_rates" => c.halving_rates = list(path, n, key, v)?,
        "strides" => c.strides = list(path, n, key, v)?,
        "use_uncertainty_weights" => c.use_uncertainty_weights = bool_value(path, n, key, v)?,
        "adam_beta1" => c.adam.beta1 = value(path, n, key, v)?,
        "adam_beta2" => c.adam.beta2 = value(path, n, key, v)?,
        "adam_eps" => c.adam.eps = value(path, n, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses config text. `origin` labels errors and anchors relative paths;
/// extrinsic files named by the config are read.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let base = origin.parent().unwrap_or(Path::new("."));
    let entries: Vec<(usize, String, String)> = content_lines(text)
        .map(|(n, line)| {
            let line = line.split(" #").next().unwrap_or(line);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, n, "expected key = value"))?;
            Ok((n, k.trim().to_string(), v.trim().to_string()))
        })
        .collect::<Result<_>>()?;

    // the profile picks the defaults every other key overrides
    let mut desk = false;
    for (n, k, v) in &entries {
        if k == "profile" {
            desk = match v.as_str() {
                "desk" => true,
                "full" => false,
                _ => return Err(Error::parse(origin, *n, format!("unknown profile {v:?}"))),
            };
        }
    }
    let (mut geom, mut calib) = if desk {
        (GeomFitConfig::desk(), CalibConfig::desk())
    } else {
        (GeomFitConfig::default(), CalibConfig::default())
    };

    let mut paths: std::collections::HashMap<String, PathBuf> = Default::default();
    let mut cloud_format = PointFormat::KittiBin;
    let mut cam = [f64::NAN; 4];
    let mut size = [0usize; 2];
    let mut seed = 0u64;
    let mut seen = std::collections::HashSet::new();
    for (n, k, v) in &entries {
        let n = *n;
        if !seen.insert(k.as_str()) {
            return Err(Error::parse(origin, n, format!("duplicate key {k}")));
        }
        let known = match k.as_str() {
            "profile" => true,
            "seed" => {
                seed = value(origin, n, k, v)?;
                true
            }
            "data.clouds" | "data.poses" | "data.images" | "data.correspondences" | "data.geometry" | "output.dir"
            | "extrinsic.init" | "extrinsic.gt" => {
                paths.insert(k.clone(), base.join(v));
                true
            }
            "data.cloud_format" => {
                cloud_format = v.parse().map_err(|_| Error::parse(origin, n, format!("unknown point format {v:?}")))?;
                true
            }
            "camera.fx" => { cam[0] = value(origin, n, k, v)?; true }
            "camera.fy" => { cam[1] = value(origin, n, k, v)?; true }
            "camera.cx" => { cam[2] = value(origin, n, k, v)?; true }
            "camera.cy" => { cam[3] = value(origin, n, k, v)?; true }
            "camera.width" => { size[0] = value(origin, n, k, v)?; true }
            "camera.height" => { size[1] = value(origin, n, k, v)?; true }
            other => match other.split_once('.') {
                Some(("geom", f)) if f != "seed" => set_geom(&mut geom, f, v, origin, n)?,
                Some(("calib", f)) if f != "seed" => set_calib(&mut calib, f, v, origin, n)?,
                _ => false,
            },
        };
        if !known {
            return Err(Error::Config(format!("{}:{n}: unknown key {k:?}", origin.display())));
        }
    }

    let required = |key: &str| {
        paths
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: missing key {key}", origin.display())))
    };
    if cam.iter().any(|v| v.is_nan()) || size.contains(&0) {
        return Err(Error::Config(format!("{}: camera.fx, fy, cx, cy, width and height are required", origin.display())));
    }
    let intrinsics = Intrinsics::new(cam[0], cam[1], cam[2], cam[3], size[0], size[1])?;
    let initial = read_extrinsic(&required("extrinsic.init")?)?;
    let ground_truth = paths.get("extrinsic.gt").map(|p| read_extrinsic(p)).transpose()?;
    let mut cfg = RunConfig {
        clouds: required("data.clouds")?,
        cloud_format,
        poses: required("data.poses")?,
        images: required("data.images")?,
        correspondences: paths.get("data.correspondences").cloned(),
        geometry: paths.get("data.geometry").cloned(),
        output: paths.get("output.dir").cloned().unwrap_or_else(|| base.join("out")),
        intrinsics,
        initial,
        ground_truth,
        geom,
        calib,
        seed,
    };
    cfg.set_seed(seed);
    cfg.geom.validate()?;
    cfg.calib.validate()?;
    for p in [&cfg.clouds, &cfg.poses, &cfg.images].into_iter().chain(cfg.correspondences.iter()) {
        if !p.exists() {
            return Err(Error::Config(format!("{}: {} does not exist", origin.display(), p.display())));
        }
    }
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    parse_config(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_extrinsic;

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for d in ["scans", "images"] {
            std::fs::create_dir(dir.path().join(d)).unwrap();
        }
        std::fs::write(dir.path().join("poses.txt"), "").unwrap();
        write_extrinsic(&dir.path().join("init.txt"), &Se3Params::from_array([0.1, 0.0, 0.0, 0.0, 0.0, 0.2])).unwrap();
        let cfg = dir.path().join("run.cfg");
        (dir, cfg)
    }

    const BASE: &str = "data.clouds = scans\ndata.poses = poses.txt\ndata.images = images\nextrinsic.init = init.txt\n\
camera.fx = 40\ncamera.fy = 40\ncamera.cx = 31.5\ncamera.cy = 23.5\ncamera.width = 64\ncamera.height = 48\n";

    #[test]
    fn parses_sections_and_overrides() {
        let (_d, path) = setup();
        let text = format!("{BASE}profile = desk\nseed = 9 # global\ngeom.lambda_dist = 500\ncalib.strides = 4, 1\ncalib.use_uncertainty_weights = false\n");
        let c = parse_config(&text, &path).unwrap();
        assert_eq!(c.geom.lambda_dist, 500.0);
        assert_eq!(c.geom.iters, GeomFitConfig::desk().iters);
        assert_eq!(c.calib.strides, vec![4, 1]);
        assert!(!c.calib.use_uncertainty_weights);
        assert_eq!((c.seed, c.geom.seed, c.calib.seed), (9, 9, 9));
        assert_eq!(c.initial.to_array()[5], 0.2);
        assert_eq!(c.intrinsics.width, 64);
        assert!(c.ground_truth.is_none());
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let (_d, path) = setup();
        let typo = format!("{BASE}geom.lamda_dist = 5\n");
        assert!(matches!(parse_config(&typo, &path), Err(Error::Config(m)) if m.contains("lamda_dist")));
        let bad = format!("{BASE}calib.iters = many\n");
        assert!(matches!(parse_config(&bad, &path), Err(Error::Parse { line: 11, .. })));
        let neg = format!("{BASE}calib.theta2 = -1\n");
        assert!(matches!(parse_config(&neg, &path), Err(Error::Config(_))));
        let dup = format!("{BASE}seed = 1\nseed = 2\n");
        assert!(matches!(parse_config(&dup, &path), Err(Error::Parse { line: 12, .. })));
        assert!(matches!(parse_config("no equals sign", &path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let (_d, path) = setup();
        let text = BASE.replace("data.images = images", "data.images = nowhere");
        assert!(matches!(parse_config(&text, &path), Err(Error::Config(_))));
        let text = BASE.replace("data.poses = poses.txt\n", "");
        assert!(matches!(parse_config(&text, &path), Err(Error::Config(m)) if m.contains("data.poses")));
    }
}
