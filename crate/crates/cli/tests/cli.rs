use std::path::Path;
use std::process::{Command, Output};

fn splatcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = splatcal(&["evaluate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = splatcal(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let o = splatcal(&["evaluate", "--est", path(&missing), "--gt", path(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn evaluate_identical_extrinsics_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.txt");
    splatcal::io::write_extrinsic(&f, &splatcal::Se3Params::from_array([0.1, -0.2, 0.3, 0.01, 0.02, -0.03])).unwrap();
    let o = splatcal(&["evaluate", "--est", path(&f), "--gt", path(&f)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("rotation error: 0.000°"), "{out}");
    assert!(out.contains("translation error: 0.00 cm"), "{out}");
}

#[test]
fn bad_bias_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = splatcal(&["synth", "--out", path(dir.path()), "--bias", "1,2,3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_fit_calibrate_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = splatcal(&["synth", "--out", path(&data), "--frames", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = data.join("config.cfg");
    assert!(cfg.exists());
    assert!(data.join("velodyne/000000.bin").exists());
    assert!(data.join("image/000002.ppm").exists());

    // keep the debug-build run short
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("geom.iters = 20\ncalib.iters = 10\n");
    std::fs::write(&cfg, text).unwrap();

    let ckpt = dir.path().join("geometry.spl");
    let o = splatcal(&["fit-geom", "--config", path(&cfg), "--out", path(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.exists());
    assert!(dir.path().join("geometry.log.csv").exists());

    let o = splatcal(&["calibrate", "--config", path(&cfg), "--geometry", path(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = data.join("out");
    for f in ["extrinsic.txt", "report.txt", "history.csv", "events.log"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    splatcal::io::read_extrinsic(&out.join("extrinsic.txt")).unwrap();

    let o = splatcal(&[
        "evaluate",
        "--est",
        path(&out.join("extrinsic.txt")),
        "--gt",
        path(&data.join("extrinsic_gt.txt")),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("translation error:"));

    let renders = dir.path().join("renders");
    let o = splatcal(&[
        "render",
        "--config",
        path(&cfg),
        "--checkpoint",
        path(&ckpt),
        "--frames",
        "1",
        "--out",
        path(&renders),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["color", "depth", "error", "overlay"] {
        let img = splatcal::io::read_ppm(&renders.join(format!("{name}_000001.ppm"))).unwrap();
        assert_eq!(img.width, 64);
    }

    let o = splatcal(&["render", "--config", path(&cfg), "--checkpoint", path(&ckpt), "--frames", "99", "--out", path(&renders)]);
    assert_eq!(o.status.code(), Some(1));
}
