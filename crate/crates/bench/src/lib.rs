//! Shared fixtures for the pipeline benchmarks.

use splatcal::geomfit::{fit_geometry, GeomFitConfig};
use splatcal::splat::SplatField;
use splatcal::synth::{Dataset, DatasetSpec, TrajectorySpec};

/// A short corridor sequence with a briefly fitted field.
pub fn small_scene() -> (Dataset, SplatField) {
    let spec = DatasetSpec {
        trajectory: TrajectorySpec {
            frames: 4,
            ..TrajectorySpec::default()
        },
        ..DatasetSpec::default()
    };
    let data = Dataset::generate(&spec).expect("synthetic dataset");
    let cfg = GeomFitConfig {
        iters: 50,
        ..GeomFitConfig::desk()
    };
    let (field, _) = fit_geometry(&data.lidar, &cfg).expect("geometry fit");
    (data, field)
}
