//! Shared fixtures for the solver benchmarks.

use kinefit_core::sim_eval::{canned_scripts, synthesize_predictions, NoiseSpec};
use kinefit_core::tracking::TimedPrediction;
use kinefit_core::{CameraIntrinsics, Skeleton};

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid intrinsics")
}

/// Noisy predictions for the first canned script.
pub fn noisy_stream(skeleton: &Skeleton) -> Vec<TimedPrediction> {
    let noise = NoiseSpec::new(3.0, 0.02, [0.3, 1.0], 0.1, 11).expect("valid noise");
    synthesize_predictions(skeleton, &camera(), &canned_scripts()[0], &noise, 30.0)
        .expect("script synthesizes")
        .predictions
}
