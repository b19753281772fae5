//! Extrinsic calibration against camera images on a frozen splat geometry.
//!
//! The objective is the weighted sum of an uncertainty-weighted photometric
//! term, a depth-based reprojection term between consecutive frames and a
//! robust triangulation term on feature correspondences. Splat colors and
//! the six extrinsic coordinates are optimized jointly with Adam.

mod diagnostic;
mod image;
mod photometric;
mod pose;
mod reproject;
mod triangulate;

pub use diagnostic::{extrinsic_gradient_analytic, AnalyticGradient, HitDiagnostic};
pub use image::{CameraFrame, Image, Sample};
pub use photometric::{photometric_loss, PhotometricLoss, DEGENERATE_COS};
pub use pose::{PoseGradient, PoseState};
pub use reproject::{occlusion_mask, reproject_pixel, reprojection_loss, strided_pixels, Reprojected};
pub use triangulate::{
    triangulate_depth, triangulation_loss, tukey, tukey_derivative, Correspondence, CorrespondenceSet, PoseLoss,
    TriangulatedDepth, TRIANGULATION_EPS,
};

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    nearest_rotation, pose_error, se3_exp, se3_log, so3_log, Intrinsics, Mat3, SE3Pose, Se3Params, Vec2, Vec3,
};
use crate::optim::{Adam, AdamConfig};
use crate::splat::SplatField;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibConfig {
    /// Weight of the triangulation term.
    pub lambda_t: f64,
    /// Weight of the reprojection term.
    pub lambda_r: f64,
    /// Tukey saturation threshold (m).
    pub tukey_c: f64,
    /// Depth agreement required by the occlusion mask (m).
    pub theta2: f64,
    pub iters: usize,
    /// Initial rates on the rotation and translation coordinates.
    pub lr_rotation: f64,
    pub lr_translation: f64,
    /// Rates after the rotation has settled.
    pub lr_rotation_fine: f64,
    pub lr_translation_fine: f64,
    pub lr_color: f64,
    /// Length of the window used by the schedule tests.
    pub schedule_window: usize,
    /// Rotation change over one window below which the fine rates apply (deg).
    pub rotation_settle_deg: f64,
    /// Translation change per iteration, averaged over a window, below
    /// which all rates are halved; each threshold fires once, in order.
    pub halving_rates: Vec<f64>,
    /// Reprojection pixel strides, spread evenly over the iterations.
    pub strides: Vec<usize>,
    pub photometric_batch: usize,
    pub reprojection_batch: usize,
    pub triangulation_batch: usize,
    pub use_uncertainty_weights: bool,
    /// The result is the mean pose over this many final iterations; 0
    /// returns the last iterate.
    pub average_last: usize,
    /// Fraction of grazing hits, over `degenerate_window` iterations,
    /// above which a warning is logged.
    pub degenerate_warn_fraction: f64,
    pub degenerate_window: usize,
    pub log_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_r: 200.0,
            tukey_c: 1.0,
            theta2: 0.05,
            iters: 15000,
            lr_rotation: 1e-2,
            lr_translation: 5e-4,
            lr_rotation_fine: 1e-3,
            lr_translation_fine: 1e-2,
            lr_color: 2.5e-3,
            schedule_window: 500,
            rotation_settle_deg: 0.1,
            halving_rates: vec![1e-5, 5e-6],
            strides: vec![8, 4, 2, 1],
            photometric_batch: 16384,
            reprojection_batch: 16384,
            triangulation_batch: 4096,
            use_uncertainty_weights: true,
            average_last: 0,
            degenerate_warn_fraction: 0.5,
            degenerate_window: 1000,
            log_every: 10,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl CalibConfig {
    /// Fewer iterations and smaller batches for the synthetic desk scenes.
    pub fn desk() -> Self {
        Self {
            iters: 3000,
            photometric_batch: 512,
            reprojection_batch: 256,
            triangulation_batch: 128,
            average_last: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tukey_c", self.tukey_c),
            ("theta2", self.theta2),
            ("lr_rotation", self.lr_rotation),
            ("lr_translation", self.lr_translation),
            ("lr_rotation_fine", self.lr_rotation_fine),
            ("lr_translation_fine", self.lr_translation_fine),
            ("lr_color", self.lr_color),
            ("rotation_settle_deg", self.rotation_settle_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("calib.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_t", self.lambda_t), ("lambda_r", self.lambda_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("calib.{name} must be non-negative, got {v}")));
            }
        }
        if self.iters == 0 || self.schedule_window == 0 || self.degenerate_window == 0 || self.log_every == 0 {
            return Err(Error::Config("calib iteration counts and windows must be positive".into()));
        }
        if self.photometric_batch == 0 || self.reprojection_batch == 0 || self.triangulation_batch == 0 {
            return Err(Error::Config("calib batch sizes must be positive".into()));
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Config("calib.strides must be a non-empty list of positive strides".into()));
        }
        if self.halving_rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("calib.halving_rates must be positive".into()));
        }
        Ok(())
    }

    /// Reprojection stride in effect at iteration `it`.
    pub fn stride_at(&self, it: usize) -> usize {
        let k = self.strides.len();
        self.strides[(it * k / self.iters.max(1)).min(k - 1)]
    }
}

/// Current extrinsic coordinates with the optimizer state that moves them.
#[derive(Clone, Debug)]
pub struct ExtrinsicEstimate {
    pub xi: Se3Params,
    pub adam: Adam,
}

impl ExtrinsicEstimate {
    pub fn new(xi: Se3Params, adam: AdamConfig) -> Self {
        Self {
            xi,
            adam: Adam::new(6, adam),
        }
    }

    pub fn pose(&self) -> SE3Pose {
        se3_exp(&self.xi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleEventKind {
    /// Rotation settled: switch to the fine rates.
    FineRates,
    /// The `n`-th halving of both rates (1-based).
    Halving(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleEvent {
    pub iteration: usize,
    pub kind: ScheduleEventKind,
    pub lr_rotation: f64,
    pub lr_translation: f64,
}

/// Rate schedule driven by how much the estimate still moves.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    pub lr_rotation: f64,
    pub lr_translation: f64,
    window: usize,
    settle_deg: f64,
    fine: (f64, f64),
    halving_rates: Vec<f64>,
    fine_phase: bool,
    halvings: usize,
    last_event: usize,
    history: VecDeque<SE3Pose>,
}

impl LrSchedule {
    pub fn new(cfg: &CalibConfig) -> Self {
        Self {
            lr_rotation: cfg.lr_rotation,
            lr_translation: cfg.lr_translation,
            window: cfg.schedule_window,
            settle_deg: cfg.rotation_settle_deg,
            fine: (cfg.lr_rotation_fine, cfg.lr_translation_fine),
            halving_rates: cfg.halving_rates.clone(),
            fine_phase: false,
            halvings: 0,
            last_event: 0,
            history: VecDeque::with_capacity(cfg.schedule_window + 1),
        }
    }

    /// Records the pose after `iteration` updates and fires at most one
    /// event. Events need a full window of history since the previous one.
    pub fn observe(&mut self, iteration: usize, pose: &SE3Pose) -> Option<ScheduleEvent> {
        self.history.push_back(*pose);
        if self.history.len() > self.window + 1 {
            self.history.pop_front();
        }
        if self.history.len() <= self.window || iteration < self.last_event + self.window {
            return None;
        }
        let old = self.history.front().unwrap();
        let kind = if !self.fine_phase {
            let change = so3_log(&(pose.rotation * old.rotation.transpose())).norm().to_degrees();
            (change < self.settle_deg).then(|| {
                self.fine_phase = true;
                self.lr_rotation = self.fine.0;
                self.lr_translation = self.fine.1;
                ScheduleEventKind::FineRates
            })?
        } else {
            let threshold = *self.halving_rates.get(self.halvings)?;
            let rate = (pose.translation - old.translation).norm() / self.window as f64;
            (rate < threshold).then(|| {
                self.halvings += 1;
                self.lr_rotation *= 0.5;
                self.lr_translation *= 0.5;
                ScheduleEventKind::Halving(self.halvings)
            })?
        };
        self.last_event = iteration;
        Some(ScheduleEvent {
            iteration,
            kind,
            lr_rotation: self.lr_rotation,
            lr_translation: self.lr_translation,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibLogEntry {
    pub iteration: usize,
    pub photometric: f64,
    pub reprojection: f64,
    pub triangulation: f64,
    pub total: f64,
    pub stride: usize,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub xi: [f64; 6],
}

#[derive(Clone, Debug, Default)]
pub struct CalibReport {
    pub initial_xi: Se3Params,
    pub final_xi: Se3Params,
    pub history: Vec<CalibLogEntry>,
    pub events: Vec<ScheduleEvent>,
    pub degenerate_warnings: usize,
}

impl CalibReport {
    pub fn history_csv(&self) -> String {
        let mut s = String::from(
            "iteration,photometric,reprojection,triangulation,total,stride,lr_rotation,lr_translation,rho_x,rho_y,rho_z,phi_x,phi_y,phi_z\n",
        );
        for e in &self.history {
            let _ = write!(
                s,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{},{:e},{:e}",
                e.iteration, e.photometric, e.reprojection, e.triangulation, e.total, e.stride, e.lr_rotation, e.lr_translation
            );
            for v in e.xi {
                let _ = write!(s, ",{v:.9}");
            }
            s.push('\n');
        }
        s
    }

    pub fn events_log(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let what = match e.kind {
                ScheduleEventKind::FineRates => "rotation settled, fine rates".to_string(),
                ScheduleEventKind::Halving(n) => format!("translation settled, halving {n}"),
            };
            let _ = writeln!(
                s,
                "iteration {}: {what} (rotation lr {:e}, translation lr {:e})",
                e.iteration, e.lr_rotation, e.lr_translation
            );
        }
        s
    }

    /// Human-readable summary; includes the error against `gt` when given.
    pub fn summary(&self, gt: Option<&SE3Pose>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "initial xi: {}", self.initial_xi);
        let _ = writeln!(s, "final xi:   {}", self.final_xi);
        if let Some(gt) = gt {
            let e0 = pose_error(&se3_exp(&self.initial_xi), gt);
            let e1 = pose_error(&se3_exp(&self.final_xi), gt);
            let _ = writeln!(s, "initial error: {:.3} deg / {:.2} cm", e0.rot_deg, e0.trans_m * 100.0);
            let _ = writeln!(s, "final error:   {:.3} deg / {:.2} cm", e1.rot_deg, e1.trans_m * 100.0);
        }
        if let Some(last) = self.history.last() {
            let _ = writeln!(
                s,
                "final losses: photometric {:.6e}, reprojection {:.6e}, triangulation {:.6e}",
                last.photometric, last.reprojection, last.triangulation
            );
        }
        let _ = writeln!(s, "degenerate-splat warnings: {}", self.degenerate_warnings);
        s.push_str("schedule events:\n");
        if self.events.is_empty() {
            s.push_str("  none\n");
        }
        for line in self.events_log().lines() {
            let _ = writeln!(s, "  {line}");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct CalibResult {
    pub estimate: ExtrinsicEstimate,
    /// Input field with optimized colors; geometry untouched.
    pub field: SplatField,
    pub report: CalibReport,
}

/// Inputs shared by every calibration step.
#[derive(Clone, Copy, Debug)]
pub struct CalibInputs<'a> {
    pub frames: &'a [CameraFrame],
    /// LiDAR world-to-sensor poses, indexed by [`CameraFrame::lidar_index`].
    pub lidar_poses: &'a [SE3Pose],
    pub correspondences: &'a CorrespondenceSet,
    pub intrinsics: &'a Intrinsics,
}

impl CalibInputs<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty("no camera frames".into()));
        }
        self.intrinsics.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            f.image.check_matches(self.intrinsics)?;
            if f.lidar_index >= self.lidar_poses.len() {
                return Err(Error::Config(format!(
                    "camera frame {i} refers to LiDAR pose {} of {}",
                    f.lidar_index,
                    self.lidar_poses.len()
                )));
            }
        }
        self.correspondences.validate(self.intrinsics, self.frames.len())
    }

    /// LiDAR pose of each camera frame.
    pub fn frame_poses(&self) -> Vec<SE3Pose> {
        self.frames.iter().map(|f| self.lidar_poses[f.lidar_index]).collect()
    }

    pub fn images(&self) -> Vec<Image> {
        self.frames.iter().map(|f| f.image.clone()).collect()
    }
}

/// Losses and extrinsic gradient of the full objective at one estimate.
#[derive(Clone, Debug)]
pub struct Objective {
    pub photometric: PhotometricLoss,
    pub reprojection: Option<PoseLoss>,
    pub triangulation: Option<PoseLoss>,
    pub total: f64,
    pub xi_grad: [f64; 6],
}

/// Evaluates `L_ph + lambda_t L_tr + lambda_r L_repr` on the given
/// samples. Terms with zero weight are not evaluated.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    field: &crate::splat::PreparedField,
    intr: &Intrinsics,
    state: &PoseState,
    images: &[Image],
    photo_pixels: &[(usize, Vec2)],
    repr_pixels: &[(usize, Vec2)],
    pairs: &[Correspondence],
    cfg: &CalibConfig,
) -> Objective {
    let photometric = photometric_loss(field, intr, state, images, photo_pixels, cfg.use_uncertainty_weights);
    let mut grad = photometric.grad.clone();
    let mut total = photometric.value;
    let reprojection = (cfg.lambda_r > 0.0).then(|| {
        let mut l = reprojection_loss(field, intr, state, images, repr_pixels, cfg.theta2);
        total += cfg.lambda_r * l.value;
        l.grad.scale(cfg.lambda_r);
        grad.add(&l.grad);
        l
    });
    let triangulation = (cfg.lambda_t > 0.0).then(|| {
        let mut l = triangulation_loss(field, intr, state, pairs, cfg.tukey_c);
        total += cfg.lambda_t * l.value;
        l.grad.scale(cfg.lambda_t);
        grad.add(&l.grad);
        l
    });
    Objective {
        xi_grad: grad.to_params(state),
        photometric,
        reprojection,
        triangulation,
        total,
    }
}

fn draw<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        items.to_vec()
    } else {
        let mut idx = sample(rng, items.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i]).collect()
    }
}

/// Jointly optimizes splat colors and the extrinsic, starting from `xi0`.
/// The field must come out of the geometry fit; its geometric parameters
/// are returned bit-identical.
pub fn calibrate(field: &SplatField, inputs: &CalibInputs, xi0: &Se3Params, cfg: &CalibConfig) -> Result<CalibResult> {
    cfg.validate()?;
    inputs.validate()?;
    if !field.frozen_geometry {
        return Err(Error::Config("calibration needs a field with frozen geometry".into()));
    }
    if field.is_empty() {
        return Err(Error::Empty("splat field has no splats".into()));
    }
    if !xi0.is_finite() {
        return Err(Error::Domain(format!("initial extrinsic {xi0} is not finite")));
    }
    let intr = inputs.intrinsics;
    let images = inputs.images();
    let frame_poses = inputs.frame_poses();
    let n_frames = images.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut field = field.clone();
    let mut prepared = field.prepare();
    let mut estimate = ExtrinsicEstimate::new(*xi0, cfg.adam);
    let mut color_adam = Adam::new(field.len() * 3, cfg.adam);
    let mut schedule = LrSchedule::new(cfg);
    let mut report = CalibReport {
        initial_xi: *xi0,
        ..Default::default()
    };
    let (mut window_hits, mut window_degenerate) = (0usize, 0usize);
    let mut grid_stride = 0;
    let mut grid = Vec::new();
    let average_from = cfg.iters.saturating_sub(cfg.average_last);
    let (mut rot_sum, mut trans_sum, mut averaged) = (Mat3::zeros(), Vec3::zeros(), 0usize);

    for it in 0..cfg.iters {
        let stride = cfg.stride_at(it);
        if stride != grid_stride {
            grid = strided_pixels(intr, n_frames.saturating_sub(1), stride);
            grid_stride = stride;
        }
        let photo: Vec<(usize, Vec2)> = (0..cfg.photometric_batch)
            .map(|_| {
                let f = rng.gen_range(0..n_frames);
                let x = rng.gen_range(0..intr.width);
                let y = rng.gen_range(0..intr.height);
                (f, Vec2::new(x as f64, y as f64))
            })
            .collect();
        let repr = if cfg.lambda_r > 0.0 { draw(&mut rng, &grid, cfg.reprojection_batch) } else { Vec::new() };
        let pairs = if cfg.lambda_t > 0.0 {
            draw(&mut rng, &inputs.correspondences.pairs, cfg.triangulation_batch)
        } else {
            Vec::new()
        };

        let state = PoseState::new(&estimate.xi, &frame_poses);
        let obj = objective(&prepared, intr, &state, &images, &photo, &repr, &pairs, cfg);
        let color_finite = obj.photometric.colors.iter().all(|c| c.iter().all(|v| v.is_finite()));
        if !obj.total.is_finite() || obj.xi_grad.iter().any(|g| !g.is_finite()) || !color_finite {
            return Err(Error::Divergence(format!(
                "calibration at iteration {it}: total {}, photometric {}, xi {}, xi gradient {:?}",
                obj.total, obj.photometric.value, estimate.xi, obj.xi_grad
            )));
        }

        if it % cfg.log_every == 0 || it + 1 == cfg.iters {
            report.history.push(CalibLogEntry {
                iteration: it,
                photometric: obj.photometric.value,
                reprojection: obj.reprojection.as_ref().map_or(0.0, |l| l.value),
                triangulation: obj.triangulation.as_ref().map_or(0.0, |l| l.value),
                total: obj.total,
                stride,
                lr_rotation: schedule.lr_rotation,
                lr_translation: schedule.lr_translation,
                xi: estimate.xi.to_array(),
            });
        }

        window_hits += obj.photometric.hits;
        window_degenerate += obj.photometric.degenerate_hits;
        if (it + 1) % cfg.degenerate_window == 0 {
            if window_hits > 0 && window_degenerate as f64 > cfg.degenerate_warn_fraction * window_hits as f64 {
                log::warn!(
                    "iterations {}..{}: {window_degenerate} of {window_hits} hits graze their splats",
                    it + 1 - cfg.degenerate_window,
                    it + 1
                );
                report.degenerate_warnings += 1;
            }
            (window_hits, window_degenerate) = (0, 0);
        }

        let mut xi = estimate.xi.to_array();
        let (lr_t, lr_r) = (schedule.lr_translation, schedule.lr_rotation);
        estimate.adam.step(&mut xi, &obj.xi_grad, |i| if i < 3 { lr_t } else { lr_r });
        estimate.xi = Se3Params::from_array(xi);

        let mut colors: Vec<f64> = field.splats.iter().flat_map(|s| s.color.iter().copied().collect::<Vec<_>>()).collect();
        let color_grad: Vec<f64> = obj.photometric.colors.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        color_adam.step(&mut colors, &color_grad, |_| cfg.lr_color);
        for (s, c) in field.splats.iter_mut().zip(colors.chunks_exact(3)) {
            s.color = Vec3::new(c[0], c[1], c[2]);
            s.clamp_color();
        }
        prepared.update_colors(&field);

        let pose = estimate.pose();
        if it >= average_from {
            rot_sum += pose.rotation;
            trans_sum += pose.translation;
            averaged += 1;
        }
        if let Some(e) = schedule.observe(it + 1, &pose) {
            log::info!("calibration schedule: {e:?}");
            report.events.push(e);
        }
    }
    if averaged > 1 {
        let n = averaged as f64;
        let mean = SE3Pose::new(nearest_rotation(&(rot_sum / n)), trans_sum / n);
        estimate.xi = se3_log(&mean);
    }
    report.final_xi = estimate.xi;
    field.frozen_geometry = true;
    Ok(CalibResult {
        estimate,
        field,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_milestones() {
        let cfg = CalibConfig::default();
        assert_eq!(cfg.stride_at(0), 8);
        assert_eq!(cfg.stride_at(3749), 8);
        assert_eq!(cfg.stride_at(3750), 4);
        assert_eq!(cfg.stride_at(7500), 2);
        assert_eq!(cfg.stride_at(11250), 1);
        assert_eq!(cfg.stride_at(14999), 1);
    }

    #[test]
    fn config_validation() {
        assert!(CalibConfig::default().validate().is_ok());
        assert!(CalibConfig::desk().validate().is_ok());
        let bad = CalibConfig {
            tukey_c: 0.0,
            ..CalibConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let ablated = CalibConfig {
            lambda_r: 0.0,
            ..CalibConfig::default()
        };
        assert!(ablated.validate().is_ok());
    }

    fn pose_at(rot_deg: f64, t: f64) -> SE3Pose {
        SE3Pose::new(crate::geometry::so3_exp(&Vec3::new(0.0, 0.0, rot_deg.to_radians())), Vec3::new(t, 0.0, 0.0))
    }

    #[test]
    fn schedule_fires_in_order_once() {
        let cfg = CalibConfig::default();
        let mut s = LrSchedule::new(&cfg);
        let mut events = Vec::new();
        for it in 1..=5000 {
            // rotation moves fast for 800 iterations, translation creeps
            // more and more slowly afterwards
            let rot = (it.min(800) as f64) * 0.01;
            let t = if it < 2000 { it as f64 * 2e-5 } else if it < 3000 { 0.04 + (it - 2000) as f64 * 7e-6 } else { 0.047 + (it - 3000) as f64 * 1e-6 };
            if let Some(e) = s.observe(it, &pose_at(rot, t)) {
                events.push(e);
            }
        }
        let kinds: Vec<ScheduleEventKind> = events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![ScheduleEventKind::FineRates, ScheduleEventKind::Halving(1), ScheduleEventKind::Halving(2)]);
        let its: Vec<usize> = events.iter().map(|e| e.iteration).collect();
        assert!(its[0] > 800 && its[0] <= 1300, "{its:?}");
        assert!((2380..=2390).contains(&its[1]), "{its:?}");
        assert!((3160..=3170).contains(&its[2]), "{its:?}");
        assert_eq!(s.lr_rotation, 2.5e-4);
        assert_eq!(s.lr_translation, 2.5e-3);
    }

    #[test]
    fn schedule_needs_full_window() {
        let cfg = CalibConfig::default();
        let mut s = LrSchedule::new(&cfg);
        for it in 1..=500 {
            assert!(s.observe(it, &SE3Pose::identity()).is_none());
        }
        assert!(s.observe(501, &SE3Pose::identity()).is_some());
    }
}
