use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::{rotation, HandPose, Skeleton, THETA_COUNT};

const WAVE: &str = include_str!("../../data/scripts/wave.json");
const CURL: &str = include_str!("../../data/scripts/curl.json");
const ROTATION_SWEEP: &str = include_str!("../../data/scripts/rotation_sweep.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub pose: HandPose,
}

/// Keyframed hand motion. Translation and articulation are interpolated
/// linearly, the global rotation by quaternion slerp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    #[serde(default)]
    pub name: String,
    pub keyframes: Vec<Keyframe>,
}

impl MotionScript {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn start(&self) -> f64 {
        self.keyframes.first().map_or(0.0, |k| k.t)
    }

    pub fn end(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.t)
    }

    /// Checks ordering and that every keyframe respects the joint limits.
    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(Error::InvalidInput("motion script has no keyframes".into()));
        }
        for (i, pair) in self.keyframes.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::InvalidInput(format!(
                    "keyframe {} at t={} does not follow t={}",
                    i + 1,
                    pair[1].t,
                    pair[0].t
                )));
            }
        }
        let (lo, hi) = (skeleton.theta_min(), skeleton.theta_max());
        for (i, k) in self.keyframes.iter().enumerate() {
            if !k.t.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "keyframe {i} has a non-finite time"
                )));
            }
            if let Some(d) =
                (0..THETA_COUNT).find(|&d| k.pose.theta[d] < lo[d] || k.pose.theta[d] > hi[d])
            {
                return Err(Error::InvalidInput(format!(
                    "keyframe {i}: theta[{d}] = {} outside [{}, {}]",
                    k.pose.theta[d], lo[d], hi[d]
                )));
            }
        }
        Ok(())
    }

    /// Pose at time `t`, clamped to the script's time range.
    pub fn sample(&self, t: f64) -> HandPose {
        let keys = &self.keyframes;
        if t <= self.start() {
            return keys[0].pose.clone();
        }
        if t >= self.end() {
            return keys[keys.len() - 1].pose.clone();
        }
        let i = keys.partition_point(|k| k.t <= t) - 1;
        let (a, b) = (&keys[i], &keys[i + 1]);
        let s = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + (y - x) * s;

        let qa = to_quaternion(&a.pose);
        let qb = to_quaternion(&b.pose);
        let q = qa.slerp(&qb, s);
        let linear_r = a.pose.r.zip_map(&b.pose.r, lerp);
        let r = rotation::matrix_to_euler(q.to_rotation_matrix().matrix(), &linear_r);

        HandPose::new(
            a.pose.t.zip_map(&b.pose.t, lerp),
            r,
            a.pose.theta.zip_map(&b.pose.theta, lerp),
        )
    }
}

fn to_quaternion(pose: &HandPose) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        rotation::euler_to_matrix(&pose.r),
    ))
}

/// The three bundled scripts: finger wave, grasp-like curl, rotation sweep.
pub fn canned_scripts() -> Vec<MotionScript> {
    [WAVE, CURL, ROTATION_SWEEP]
        .into_iter()
        .map(|s| MotionScript::from_json(s).expect("bundled script parses"))
        .collect()
}
