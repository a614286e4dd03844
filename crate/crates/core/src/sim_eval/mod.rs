//! Synthetic prediction streams and accuracy metrics.

mod metrics;
mod motion;
mod synth;

pub use metrics::{depth_normalize, pck_2d, pck_3d, pck_from_errors, PckCurve, PckMode};
pub use motion::{canned_scripts, Keyframe, MotionScript};
pub use synth::{
    synthesize_predictions, GroundTruthFrame, NoiseSpec, Synthesis, OCCLUSION_OFFSET_PX,
};
