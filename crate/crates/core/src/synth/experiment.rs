//! Synthetic datasets with exact ground truth and bias sweeps over the full
//! geometry-fit and calibration pipeline.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::scene::{make_scene, Scene, ScenePreset};
use super::sensors::{
    default_extrinsic, default_intrinsics, gt_correspondences, render_gt_camera, scan_lidar, LidarPattern,
    RigTrajectory, TrajectorySpec,
};
use crate::calib::{calibrate, CalibConfig, CalibInputs, CameraFrame, CorrespondenceSet, Image};
use crate::error::Result;
use crate::geometry::{apply_bias, pose_error, se3_exp, se3_log, so3_log, Intrinsics, PoseError, SE3Pose, Se3Params, Vec3};
use crate::geomfit::{fit_geometry, GeomFitConfig, LidarFrame};
use crate::splat::SplatField;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub preset: ScenePreset,
    pub scene_seed: u64,
    pub trajectory: TrajectorySpec,
    pub pattern: LidarPattern,
    /// Range noise standard deviation (m).
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub extrinsic: SE3Pose,
    pub intrinsics: Intrinsics,
    /// Pixel spacing of the ground-truth correspondence grid.
    pub correspondence_stride: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            preset: ScenePreset::Corridor,
            scene_seed: 0,
            trajectory: TrajectorySpec::default(),
            pattern: LidarPattern::default(),
            noise_sigma: 0.0,
            noise_seed: 0,
            extrinsic: default_extrinsic(),
            intrinsics: default_intrinsics(),
            correspondence_stride: 4,
        }
    }
}

/// Everything a calibration run consumes, plus the ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scene: Scene,
    pub rig: RigTrajectory,
    pub lidar: Vec<LidarFrame>,
    pub cameras: Vec<CameraFrame>,
    /// Exact camera z-depth per pixel and frame.
    pub gt_depth: Vec<Vec<Option<f64>>>,
    pub correspondences: CorrespondenceSet,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let scene = make_scene(spec.preset, spec.scene_seed)?;
        let rig = RigTrajectory::new(&spec.trajectory, spec.extrinsic, spec.intrinsics);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        let lidar = rig
            .lidar_poses
            .iter()
            .map(|p| scan_lidar(&scene, p, &spec.pattern, spec.noise_sigma, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut cameras = Vec::with_capacity(rig.len());
        let mut gt_depth = Vec::with_capacity(rig.len());
        for i in 0..rig.len() {
            let view = render_gt_camera(&scene, &rig.camera_pose(i), &rig.intrinsics);
            cameras.push(CameraFrame {
                image: view.image,
                lidar_index: i,
            });
            gt_depth.push(view.depth);
        }
        let pairs = (0..rig.len().saturating_sub(1))
            .flat_map(|i| gt_correspondences(&scene, &rig, i, spec.correspondence_stride))
            .collect();
        Ok(Self {
            scene,
            rig,
            lidar,
            cameras,
            gt_depth,
            correspondences: CorrespondenceSet { pairs },
        })
    }

    pub fn inputs(&self) -> CalibInputs<'_> {
        CalibInputs {
            frames: &self.cameras,
            lidar_poses: &self.rig.lidar_poses,
            correspondences: &self.correspondences,
            intrinsics: &self.rig.intrinsics,
        }
    }

    pub fn gt_params(&self) -> Se3Params {
        se3_log(&self.rig.extrinsic)
    }
}

/// Per-axis extrinsic error: rotation-vector components (deg) and
/// translation components (cm).
pub fn axis_errors(est: &SE3Pose, gt: &SE3Pose) -> [f64; 6] {
    let r = so3_log(&(est.rotation * gt.rotation.transpose()));
    let t = (est.translation - gt.translation) * 100.0;
    [r.x.to_degrees(), r.y.to_degrees(), r.z.to_degrees(), t.x, t.y, t.z]
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub bias_index: usize,
    pub bias: Se3Params,
    pub seed: u64,
    pub initial: PoseError,
    /// `None` when the run failed; see `failure`.
    pub final_error: Option<PoseError>,
    pub final_xi: Option<Se3Params>,
    pub failure: Option<String>,
    pub success: bool,
    pub wall_time_s: f64,
    /// Per-axis error at each logged iteration.
    pub curve: Vec<(usize, [f64; 6])>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuccessThresholds {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self {
            rot_deg: 1.0,
            trans_m: 0.2,
        }
    }
}

impl SuccessThresholds {
    pub fn accepts(&self, e: &PoseError) -> bool {
        e.rot_deg < self.rot_deg && e.trans_m < self.trans_m
    }
}

/// Calibrates from `exp(xi_gt + bias)` for every bias and seed. Runs are
/// independent; a failed run is recorded and the sweep continues.
pub fn run_biases(
    data: &Dataset,
    field: &SplatField,
    cfg: &CalibConfig,
    biases: &[Se3Params],
    seeds: &[u64],
    thresholds: &SuccessThresholds,
) -> Vec<RunRecord> {
    let gt = data.rig.extrinsic;
    let xi_gt = data.gt_params();
    let jobs: Vec<(usize, Se3Params, u64)> = biases
        .iter()
        .enumerate()
        .flat_map(|(i, b)| seeds.iter().map(move |s| (i, *b, *s)))
        .collect();
    jobs.par_iter()
        .map(|&(bias_index, bias, seed)| {
            let start = Instant::now();
            let init = apply_bias(&xi_gt, &bias);
            let xi0 = se3_log(&init);
            let run_cfg = CalibConfig {
                seed,
                ..cfg.clone()
            };
            let outcome = calibrate(field, &data.inputs(), &xi0, &run_cfg);
            let wall_time_s = start.elapsed().as_secs_f64();
            let initial = pose_error(&init, &gt);
            match outcome {
                Ok(res) => {
                    let est = se3_exp(&res.estimate.xi);
                    let err = pose_error(&est, &gt);
                    let curve = res
                        .report
                        .history
                        .iter()
                        .map(|h| (h.iteration, axis_errors(&se3_exp(&Se3Params::from_array(h.xi)), &gt)))
                        .collect();
                    log::info!(
                        "bias {bias_index} seed {seed}: {:.3} deg / {:.2} cm in {wall_time_s:.1} s",
                        err.rot_deg,
                        err.trans_m * 100.0
                    );
                    RunRecord {
                        bias_index,
                        bias,
                        seed,
                        initial,
                        final_error: Some(err),
                        final_xi: Some(res.estimate.xi),
                        failure: None,
                        success: thresholds.accepts(&err),
                        wall_time_s,
                        curve,
                    }
                }
                Err(e) => {
                    log::warn!("bias {bias_index} seed {seed} failed: {e}");
                    RunRecord {
                        bias_index,
                        bias,
                        seed,
                        initial,
                        final_error: None,
                        final_xi: None,
                        failure: Some(e.to_string()),
                        success: false,
                        wall_time_s,
                        curve: Vec::new(),
                    }
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub geom: GeomFitConfig,
    pub calib: CalibConfig,
    pub biases: Vec<Se3Params>,
    /// One calibration run per bias and seed.
    pub seeds: Vec<u64>,
    pub thresholds: SuccessThresholds,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            geom: GeomFitConfig::desk(),
            calib: CalibConfig::desk(),
            biases: vec![Se3Params::zero()],
            seeds: vec![0],
            thresholds: SuccessThresholds::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub geometry_time_s: f64,
    pub splats: usize,
}

impl ExperimentReport {
    pub fn success_rate(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().filter(|r| r.success).count() as f64 / self.runs.len() as f64
    }

    /// One line per run.
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "bias_index,seed,bias_rho_x,bias_rho_y,bias_rho_z,bias_phi_x,bias_phi_y,bias_phi_z,rot_err_deg,trans_err_cm,success,wall_time_s\n",
        );
        for r in &self.runs {
            let _ = write!(s, "{},{}", r.bias_index, r.seed);
            for b in r.bias.to_array() {
                let _ = write!(s, ",{b}");
            }
            match r.final_error {
                Some(e) => {
                    let _ = write!(s, ",{:.6},{:.6}", e.rot_deg, e.trans_m * 100.0);
                }
                None => s.push_str(",nan,nan"),
            }
            let _ = writeln!(s, ",{},{:.3}", u8::from(r.success), r.wall_time_s);
        }
        s
    }

    /// Success rate per bias.
    pub fn success_table(&self) -> String {
        let mut s = String::from("bias_index,bias,runs,successes,success_rate\n");
        let n_bias = self.runs.iter().map(|r| r.bias_index + 1).max().unwrap_or(0);
        for b in 0..n_bias {
            let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.bias_index == b).collect();
            let ok = runs.iter().filter(|r| r.success).count();
            let _ = writeln!(
                s,
                "{b},{},{},{ok},{:.3}",
                runs[0].bias,
                runs.len(),
                ok as f64 / runs.len() as f64
            );
        }
        s
    }

    /// Per-axis error against iteration for every run.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("bias_index,seed,iteration,rot_x_deg,rot_y_deg,rot_z_deg,trans_x_cm,trans_y_cm,trans_z_cm\n");
        for r in &self.runs {
            for (it, e) in &r.curve {
                let _ = writeln!(
                    s,
                    "{},{},{it},{:.5},{:.5},{:.5},{:.4},{:.4},{:.4}",
                    r.bias_index, r.seed, e[0], e[1], e[2], e[3], e[4], e[5]
                );
            }
        }
        s
    }
}

/// Generates the dataset, fits geometry once and calibrates from every
/// bias and seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let data = Dataset::generate(&spec.dataset)?;
    let start = Instant::now();
    let (field, _) = fit_geometry(&data.lidar, &spec.geom)?;
    let geometry_time_s = start.elapsed().as_secs_f64();
    let runs = run_biases(&data, &field, &spec.calib, &spec.biases, &spec.seeds, &spec.thresholds);
    Ok(ExperimentReport {
        runs,
        geometry_time_s,
        splats: field.len(),
    })
}

/// Projects the LiDAR points of `frame` into `image` with the given
/// extrinsic, coloring each by depth from red (near) to blue (far).
pub fn lidar_overlay(image: &Image, frame: &LidarFrame, extrinsic: &SE3Pose, intr: &Intrinsics) -> Image {
    let mut out = image.clone();
    let cam = extrinsic.compose(&frame.pose);
    let mut pts: Vec<(f64, Vec3)> = frame
        .world_points()
        .iter()
        .filter_map(|p| {
            let c = cam.transform_point(p);
            (c.z > 0.1).then_some((c.z, *p))
        })
        .collect();
    if pts.is_empty() {
        return out;
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (near, far) = (pts.last().unwrap().0, pts[0].0);
    for (z, p) in pts {
        let Ok((q, _)) = intr.project(&cam.transform_point(&p)) else { continue };
        let (x, y) = (q.x.round(), q.y.round());
        if x < 0.0 || y < 0.0 || x >= intr.width as f64 || y >= intr.height as f64 {
            continue;
        }
        let t = if far > near { (z - near) / (far - near) } else { 0.0 };
        out.set(x as usize, y as usize, Vec3::new(1.0 - t, 0.2, t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{reproject_pixel, triangulate_depth};

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            trajectory: TrajectorySpec {
                frames: 3,
                ..TrajectorySpec::default()
            },
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(&small_spec()).unwrap();
        let b = Dataset::generate(&small_spec()).unwrap();
        assert_eq!(a.cameras[1].image, b.cameras[1].image);
        assert_eq!(a.lidar[2].points, b.lidar[2].points);
        assert_eq!(a.correspondences, b.correspondences);
        assert!(a.correspondences.pairs.len() > 100);
    }

    #[test]
    fn correspondences_satisfy_reprojection_and_triangulation() {
        let d = Dataset::generate(&small_spec()).unwrap();
        let intr = d.rig.intrinsics;
        let mut checked = 0;
        for c in &d.correspondences.pairs {
            let (a, b) = (d.rig.camera_pose(c.frame), d.rig.camera_pose(c.frame + 1));
            let rel = b.compose(&a.inverse());
            let (x, y) = (c.q_n.x as usize, c.q_n.y as usize);
            let z = d.gt_depth[c.frame][y * intr.width + x].unwrap();
            let w = reproject_pixel(&intr, &rel, &c.q_n, z).unwrap();
            assert!((w.pixel - c.q_next).norm() < 1e-9);
            let t = triangulate_depth(&intr, &rel, &c.q_n, &c.q_next);
            for est in [t.from_x, t.from_y].into_iter().flatten() {
                assert!((est - z).abs() < 1e-9 * z.max(1.0), "{est} vs {z}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn camera_poses_follow_extrinsic() {
        let d = Dataset::generate(&small_spec()).unwrap();
        for i in 0..d.rig.len() {
            let expect = d.rig.extrinsic.compose(&d.rig.lidar_poses[i]);
            assert_eq!(d.rig.camera_pose(i), expect);
        }
    }

    #[test]
    fn overlay_marks_pixels() {
        let d = Dataset::generate(&small_spec()).unwrap();
        let img = Image::filled(d.rig.intrinsics.width, d.rig.intrinsics.height, Vec3::zeros());
        let o = lidar_overlay(&img, &d.lidar[0], &d.rig.extrinsic, &d.rig.intrinsics);
        assert!(o.data.iter().filter(|c| c.norm() > 0.0).count() > 50);
    }

    #[test]
    fn report_tables() {
        let rec = |i, ok| RunRecord {
            bias_index: i,
            bias: Se3Params::zero(),
            seed: 0,
            initial: PoseError { rot_deg: 0.0, trans_m: 0.0 },
            final_error: Some(PoseError { rot_deg: 0.1, trans_m: 0.01 }),
            final_xi: None,
            failure: None,
            success: ok,
            wall_time_s: 1.0,
            curve: vec![(0, [0.0; 6])],
        };
        let r = ExperimentReport {
            runs: vec![rec(0, true), rec(0, false), rec(1, true)],
            geometry_time_s: 0.0,
            splats: 0,
        };
        assert_eq!(r.success_rate(), 2.0 / 3.0);
        assert_eq!(r.csv().lines().count(), 4);
        assert!(r.success_table().contains("0.500"));
        assert_eq!(r.curves_csv().lines().count(), 4);
    }
}
