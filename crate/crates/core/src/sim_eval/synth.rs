use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MotionScript;
use crate::camera::CameraIntrinsics;
use crate::energy::{normalize_relative, FramePrediction};
use crate::error::{Error, Result};
use crate::hand_model::{
    forward_kinematics, HandPose, ImagePoints, JointPositions, Skeleton, JOINT_COUNT,
};
use crate::tracking::TimedPrediction;

/// Half-width (px) of the uniform offset applied to occluded detections.
pub const OCCLUSION_OFFSET_PX: f64 = 80.0;

/// Detector noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoise")]
pub struct NoiseSpec {
    /// Std of the 2D detections, pixels.
    pub sigma_2d: f64,
    /// Std of the normalized 3D predictions.
    pub sigma_3d: f64,
    /// Confidences of visible joints are uniform in this range.
    pub omega_range: [f64; 2],
    /// Per-joint, per-frame probability of occlusion (confidence 0 and a
    /// corrupted detection).
    pub occlusion_prob: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::noiseless(0)
    }
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            sigma_2d: 0.0,
            sigma_3d: 0.0,
            omega_range: [1.0, 1.0],
            occlusion_prob: 0.0,
            seed,
        }
    }

    pub fn new(
        sigma_2d: f64,
        sigma_3d: f64,
        omega_range: [f64; 2],
        occlusion_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        let [lo, hi] = omega_range;
        if !(sigma_2d >= 0.0 && sigma_3d >= 0.0 && sigma_2d.is_finite() && sigma_3d.is_finite()) {
            return Err(Error::InvalidInput(
                "noise sigmas must be finite and >= 0".into(),
            ));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "omega_range [{lo}, {hi}] must lie in [0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&occlusion_prob) {
            return Err(Error::InvalidInput(
                "occlusion_prob must be in [0, 1]".into(),
            ));
        }
        Ok(Self {
            sigma_2d,
            sigma_3d,
            omega_range,
            occlusion_prob,
            seed,
        })
    }
}

#[derive(Deserialize)]
struct RawNoise {
    sigma_2d: f64,
    sigma_3d: f64,
    omega_range: [f64; 2],
    occlusion_prob: f64,
    seed: u64,
}

impl TryFrom<RawNoise> for NoiseSpec {
    type Error = Error;

    fn try_from(r: RawNoise) -> Result<Self> {
        Self::new(
            r.sigma_2d,
            r.sigma_3d,
            r.omega_range,
            r.occlusion_prob,
            r.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub t: f64,
    pub pose: HandPose,
    pub joints_world: JointPositions,
    pub joints_2d: ImagePoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub predictions: Vec<TimedPrediction>,
    pub ground_truth: Vec<GroundTruthFrame>,
}

/// Samples `script` at `fps` and turns each frame into a noisy detector
/// output. Deterministic for a given `noise.seed`.
pub fn synthesize_predictions(
    skeleton: &Skeleton,
    cam: &CameraIntrinsics,
    script: &MotionScript,
    noise: &NoiseSpec,
    fps: f64,
) -> Result<Synthesis> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidInput(format!("fps must be > 0, got {fps}")));
    }
    script.validate(skeleton)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let n2 = Normal::new(0.0, noise.sigma_2d).expect("validated sigma");
    let n3 = Normal::new(0.0, noise.sigma_3d).expect("validated sigma");
    let [lo, hi] = noise.omega_range;

    let start = script.start();
    let frames = ((script.end() - start) * fps + 1e-9).floor() as usize + 1;
    let mut predictions = Vec::with_capacity(frames);
    let mut ground_truth = Vec::with_capacity(frames);

    for frame in 0..frames {
        let t = start + frame as f64 / fps;
        let pose = script.sample(t);
        let joints = forward_kinematics(skeleton, &pose)?;
        let mut projected = [Vector2::zeros(); JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            projected[j] = cam.project(&joints[j]).map_err(|_| Error::ScriptInvalid {
                frame,
                reason: format!(
                    "joint {j} ({}) is behind the camera",
                    skeleton.joint(j).name
                ),
            })?;
        }
        let relative = normalize_relative(&joints)?;

        let mut u = projected;
        let mut omega = [0.0; JOINT_COUNT];
        let mut x = relative;
        for j in 0..JOINT_COUNT {
            let occluded = rng.random_bool(noise.occlusion_prob);
            let w = rng.random_range(lo..=hi);
            u[j] += Vector2::new(n2.sample(&mut rng), n2.sample(&mut rng));
            x[j] += Vector3::new(
                n3.sample(&mut rng),
                n3.sample(&mut rng),
                n3.sample(&mut rng),
            );
            let jitter = Vector2::new(
                rng.random_range(-OCCLUSION_OFFSET_PX..=OCCLUSION_OFFSET_PX),
                rng.random_range(-OCCLUSION_OFFSET_PX..=OCCLUSION_OFFSET_PX),
            );
            if occluded {
                u[j] += jitter;
            } else {
                omega[j] = w;
            }
        }
        if noise.sigma_3d > 0.0 {
            x = normalize_relative(&x)?;
        }
        predictions.push(TimedPrediction {
            t,
            pred: FramePrediction::new(u, omega, x)?,
        });
        ground_truth.push(GroundTruthFrame {
            t,
            pose,
            joints_world: joints,
            joints_2d: projected,
        });
    }
    Ok(Synthesis {
        predictions,
        ground_truth,
    })
}
