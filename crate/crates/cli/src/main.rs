//! `splatcal`: dataset generation, geometry fitting, calibration and
//! evaluation from the command line.
//!
//! Exit status is 0 on success, 1 when the pipeline reports an error and 2
//! for usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use splatcal::calib::{calibrate, Image};
use splatcal::geometry::{apply_bias, pose_error, se3_exp, se3_log, SE3Pose, Se3Params};
use splatcal::geomfit::fit_geometry;
use splatcal::gradcheck::{self, REL_TOL};
use splatcal::io::{load_dataset, read_config, read_extrinsic, scalar_image, write_dataset, write_extrinsic, write_ppm};
use splatcal::splat::{read_field, render_view, write_field, SplatField};
use splatcal::synth::{
    lidar_overlay, run_experiment, Dataset, DatasetSpec, ExperimentSpec, ScenePreset, SuccessThresholds,
    TrajectorySpec,
};

#[derive(Parser)]
#[command(name = "splatcal", version, about = "Targetless LiDAR-camera calibration on 2D Gaussian splats")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SPLATCAL_THREADS")]
    threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory with exact ground truth.
    Synth(SynthArgs),
    /// Fit splat geometry to the LiDAR scans of a dataset.
    FitGeom(FitArgs),
    /// Calibrate the LiDAR-to-camera extrinsic.
    Calibrate(CalibrateArgs),
    /// Compare an extrinsic estimate against the ground truth.
    Evaluate(EvaluateArgs),
    /// Render color, depth, uncertainty and LiDAR-overlay images.
    Render(RenderArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Run a bias sweep on a synthetic dataset.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Corridor,
    FrontoPlane,
    TwoPlane,
}

impl From<Preset> for ScenePreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Corridor => ScenePreset::Corridor,
            Preset::FrontoPlane => ScenePreset::FrontoPlane,
            Preset::TwoPlane => ScenePreset::TwoPlane,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "corridor")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Straight forward motion instead of the default weaving path.
    #[arg(long)]
    straight: bool,
    /// LiDAR range noise standard deviation (m).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Bias added to the ground-truth coordinates for the initial
    /// estimate: six comma-separated values, rho then phi.
    #[arg(long, value_parser = parse_params, default_value = "0.1,0.1,0.1,0,0,0")]
    bias: Se3Params,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint path; defaults to `<output>/geometry.spl`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Fitted checkpoint; overrides `data.geometry` from the config.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Extrinsic to render with; defaults to the ground truth, then the
    /// initial estimate from the config.
    #[arg(long)]
    extrinsic: Option<PathBuf>,
    /// Frames to render; all when omitted.
    #[arg(long, value_delimiter = ',')]
    frames: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BiasLevel {
    Near,
    Far,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "corridor")]
    preset: Preset,
    #[arg(long, value_enum, default_value = "near")]
    bias: BiasLevel,
    /// Explicit bias instead of a level: six comma-separated values.
    #[arg(long, value_parser = parse_params)]
    bias_params: Option<Se3Params>,
    /// Number of seeds, run as 0..N.
    #[arg(long, default_value_t = 10)]
    runs: u64,
    /// Scene and noise seed of the dataset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    /// Drop the reprojection term.
    #[arg(long)]
    no_repr: bool,
    /// Drop the triangulation term.
    #[arg(long)]
    no_tr: bool,
    /// Weight every photometric ray equally.
    #[arg(long)]
    no_uncertainty: bool,
}

fn parse_params(s: &str) -> std::result::Result<Se3Params, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let a: [f64; 6] = v.try_into().map_err(|v: Vec<f64>| format!("expected 6 values, got {}", v.len()))?;
    Ok(Se3Params::from_array(a))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::FitGeom(a) => fit_geom(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Render(a) => render(a),
        Command::Gradcheck(a) => return run_gradcheck(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = DatasetSpec {
        preset: a.preset.into(),
        scene_seed: a.seed,
        noise_seed: a.seed,
        noise_sigma: a.noise,
        trajectory: if a.straight {
            TrajectorySpec::forward(a.frames, TrajectorySpec::default().step)
        } else {
            TrajectorySpec {
                frames: a.frames,
                ..TrajectorySpec::default()
            }
        },
        ..DatasetSpec::default()
    };
    let data = Dataset::generate(&spec)?;
    let initial = se3_log(&apply_bias(&data.gt_params(), &a.bias));
    let cfg = write_dataset(&a.out, &data, &initial, a.seed)?;
    println!("wrote {} frames to {}", data.cameras.len(), a.out.display());
    println!("config: {}", cfg.display());
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<splatcal::io::RunConfig> {
    let mut cfg = read_config(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn fit_geom(a: FitArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.seed)?;
    let data = load_dataset(&cfg)?;
    let start = Instant::now();
    let (field, report) = fit_geometry(&data.lidar, &cfg.geom)?;
    let out = a.out.unwrap_or_else(|| cfg.output.join("geometry.spl"));
    write_field(&field, &out)?;
    let log = out.with_extension("log.csv");
    report.write_log(&log)?;
    println!(
        "fitted {} splats in {:.1} s; checkpoint {}, log {}",
        field.len(),
        start.elapsed().as_secs_f64(),
        out.display(),
        log.display()
    );
    Ok(())
}

/// Loads a checkpoint as calibration input.
fn load_geometry(path: &Path) -> Result<SplatField> {
    let mut field = read_field(path)?;
    field.frozen_geometry = true;
    Ok(field)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.seed)?;
    let data = load_dataset(&cfg)?;
    let field = match a.geometry.as_ref().or(cfg.geometry.as_ref()) {
        Some(p) => load_geometry(p)?,
        None => {
            let (field, report) = fit_geometry(&data.lidar, &cfg.geom)?;
            write_field(&field, &cfg.output.join("geometry.spl"))?;
            report.write_log(&cfg.output.join("geometry.log.csv"))?;
            field
        }
    };
    let result = calibrate(&field, &data.inputs(&cfg), &cfg.initial, &cfg.calib)?;
    let gt = cfg.ground_truth.map(|g| se3_exp(&g));
    let report = &result.report;
    let out = &cfg.output;
    write_extrinsic(&out.join("extrinsic.txt"), &report.final_xi)?;
    write_text(&out.join("report.txt"), &report.summary(gt.as_ref()))?;
    write_text(&out.join("history.csv"), &report.history_csv())?;
    write_text(&out.join("events.log"), &report.events_log())?;
    print!("{}", report.summary(gt.as_ref()));
    println!("report written to {}", out.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let est = se3_exp(&read_extrinsic(&a.est)?);
    let gt = se3_exp(&read_extrinsic(&a.gt)?);
    let e = pose_error(&est, &gt);
    println!("rotation error: {:.3}°", e.rot_deg);
    println!("translation error: {:.2} cm", e.trans_m * 100.0);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let cfg = read_config(&a.config)?;
    let data = load_dataset(&cfg)?;
    let field = read_field(&a.checkpoint)?.prepare();
    let xi = match &a.extrinsic {
        Some(p) => read_extrinsic(p)?,
        None => cfg.ground_truth.unwrap_or(cfg.initial),
    };
    let extrinsic = se3_exp(&xi);
    let intr = &cfg.intrinsics;
    let frames: Vec<usize> = if a.frames.is_empty() {
        (0..data.cameras.len()).collect()
    } else {
        a.frames
    };
    for &i in &frames {
        let Some(cam) = data.cameras.get(i) else {
            bail!("frame {i} out of range ({} frames)", data.cameras.len());
        };
        let lidar = &data.lidar[cam.lidar_index];
        let pose: SE3Pose = extrinsic.compose(&lidar.pose);
        let view = render_view(&field, intr, &pose, 1);
        let color = Image::new(view.width, view.height, view.color.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect())?;
        let depths: Vec<f64> = view.depth.iter().flatten().copied().collect();
        let (lo, hi) = depths
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
        let (lo, hi) = if lo < hi { (lo, hi) } else { (0.0, 1.0) };
        let depth = scalar_image(&view.depth, view.width, view.height, lo, hi)?;
        let err: Vec<Option<f64>> = view.error.iter().zip(&view.weight).map(|(e, w)| (*w > 0.0).then_some(*e)).collect();
        let err_hi = err.iter().flatten().fold(0.0f64, |m, v| m.max(*v)).max(1e-9);
        let error = scalar_image(&err, view.width, view.height, 0.0, err_hi)?;
        let overlay = lidar_overlay(&cam.image, lidar, &extrinsic, intr);
        for (name, img) in [("color", &color), ("depth", &depth), ("error", &error), ("overlay", &overlay)] {
            write_ppm(&a.out.join(format!("{name}_{i:06}.ppm")), img)?;
        }
    }
    println!("rendered {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> ExitCode {
    let reports = gradcheck::run_all(a.seed);
    let diag = gradcheck::diagnostic_check(a.seed);
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{:<7} fixtures {:>3}  entries {:>5}  max rel err {:.3e}  {}",
            r.loss.name(),
            r.fixtures,
            r.entries,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let diag_ok = diag.max_rel_err < 1e-5 && diag.flags_exact;
    println!(
        "diagnostic vs production: max rel err {:.3e}, grazing flags {}  {}",
        diag.max_rel_err,
        if diag.flags_exact { "exact" } else { "wrong" },
        if diag_ok { "ok" } else { "FAIL" }
    );
    println!("tolerance {REL_TOL:e}");
    if ok && diag_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let bias = a.bias_params.unwrap_or_else(|| match a.bias {
        BiasLevel::Near => Se3Params::from_array([0.1, 0.1, 0.1, 0.0, 0.0, 0.0]),
        BiasLevel::Far => Se3Params::from_array([0.2; 6]),
    });
    let mut spec = ExperimentSpec {
        dataset: DatasetSpec {
            preset: a.preset.into(),
            scene_seed: a.seed,
            noise_seed: a.seed,
            ..DatasetSpec::default()
        },
        biases: vec![bias],
        seeds: (0..a.runs).collect(),
        thresholds: SuccessThresholds::default(),
        ..ExperimentSpec::default()
    };
    if let Some(n) = a.iters {
        spec.calib.iters = n;
    }
    if a.no_repr {
        spec.calib.lambda_r = 0.0;
    }
    if a.no_tr {
        spec.calib.lambda_t = 0.0;
    }
    if a.no_uncertainty {
        spec.calib.use_uncertainty_weights = false;
    }
    let report = run_experiment(&spec)?;
    write_text(&a.out.join("runs.csv"), &report.csv())?;
    write_text(&a.out.join("success.csv"), &report.success_table())?;
    write_text(&a.out.join("curves.csv"), &report.curves_csv())?;
    for r in &report.runs {
        match (&r.final_error, &r.failure) {
            (Some(e), _) => println!(
                "seed {:>3}: {:.3}° / {:.2} cm {}",
                r.seed,
                e.rot_deg,
                e.trans_m * 100.0,
                if r.success { "success" } else { "failure" }
            ),
            (None, f) => println!("seed {:>3}: failed ({})", r.seed, f.as_deref().unwrap_or("unknown")),
        }
    }
    println!(
        "{} splats, geometry {:.1} s, success rate {:.0}%",
        report.splats,
        report.geometry_time_s,
        100.0 * report.success_rate()
    );
    Ok(())
}
