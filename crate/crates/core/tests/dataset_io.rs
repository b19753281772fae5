use splatcal::geometry::{pose_error, se3_exp, se3_log};
use splatcal::io::{load_dataset, read_config, write_dataset};
use splatcal::synth::{Dataset, DatasetSpec, ScenePreset, TrajectorySpec};

fn small(preset: ScenePreset) -> Dataset {
    Dataset::generate(&DatasetSpec {
        preset,
        trajectory: TrajectorySpec {
            frames: 3,
            ..TrajectorySpec::default()
        },
        ..DatasetSpec::default()
    })
    .unwrap()
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(ScenePreset::Corridor);
    let initial = data.gt_params();
    let cfg_path = write_dataset(dir.path(), &data, &initial, 9).unwrap();
    let cfg = read_config(&cfg_path).unwrap();
    assert_eq!(cfg.intrinsics, data.rig.intrinsics);
    let gt = cfg.ground_truth.expect("ground truth recorded");
    assert!(pose_error(&se3_exp(&gt), &data.rig.extrinsic).trans_m < 1e-12);
    assert!((se3_log(&se3_exp(&cfg.initial)).to_array().iter().zip(initial.to_array()))
        .all(|(a, b)| (a - b).abs() < 1e-12));

    let loaded = load_dataset(&cfg).unwrap();
    assert_eq!(loaded.lidar.len(), data.lidar.len());
    for (a, b) in loaded.lidar.iter().zip(&data.lidar) {
        assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            // clouds are stored as f32
            assert!((p - q).norm() < 1e-5 * q.norm().max(1.0));
        }
        assert!(pose_error(&a.pose, &b.pose).trans_m < 1e-9);
    }
    assert_eq!(loaded.cameras.len(), data.cameras.len());
    for (a, b) in loaded.cameras.iter().zip(&data.cameras) {
        assert_eq!(a.lidar_index, b.lidar_index);
        assert_eq!((a.image.width, a.image.height), (b.image.width, b.image.height));
        for (p, q) in a.image.data.iter().zip(&b.image.data) {
            // 8-bit quantisation
            assert!((p - q).abs().max() <= 0.5 / 255.0 + 1e-12);
        }
    }
    assert_eq!(loaded.correspondences.pairs.len(), data.correspondences.pairs.len());
    loaded.inputs(&cfg).validate().unwrap();
}

#[test]
fn every_preset_generates_and_writes() {
    for preset in [ScenePreset::Corridor, ScenePreset::FrontoPlane, ScenePreset::TwoPlane] {
        let dir = tempfile::tempdir().unwrap();
        let data = small(preset);
        assert!(data.lidar.iter().all(|f| !f.points.is_empty()), "{preset:?}");
        let cfg = write_dataset(dir.path(), &data, &data.gt_params(), 0).unwrap();
        load_dataset(&read_config(&cfg).unwrap()).unwrap();
    }
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(ScenePreset::Corridor);
    let cfg_path = write_dataset(dir.path(), &data, &data.gt_params(), 0).unwrap();
    let mut text = std::fs::read_to_string(&cfg_path).unwrap();
    text.push_str("calib.iters = many\n");
    std::fs::write(&cfg_path, text).unwrap();
    assert!(read_config(&cfg_path).is_err());
}
