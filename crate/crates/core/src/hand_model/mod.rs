//! Kinematic hand skeleton, its 26-parameter pose and forward kinematics.

mod calibration;
mod kinematics;
pub mod rotation;
mod skeleton;

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibration::{calibrate_bone_lengths, CALIBRATION_MIN_FRAMES};
pub(crate) use kinematics::Kinematics;
pub use kinematics::{forward_kinematics, jacobian, PoseJacobian};
pub use skeleton::{Dof, Joint, Skeleton};

/// Number of joints in the hand model, wrist and finger tips included.
pub const JOINT_COUNT: usize = 21;
/// Number of articulation angles.
pub const THETA_COUNT: usize = 20;
/// Translation (3) + Euler rotation (3) + articulation (20).
pub const PARAM_COUNT: usize = 6 + THETA_COUNT;

pub const WRIST: usize = 0;
pub const FINGER_COUNT: usize = 5;
pub const JOINTS_PER_FINGER: usize = 4;

/// Joint index of `level` (0 = MCP/CMC .. 3 = tip) on `finger` (0 = thumb .. 4 = pinky).
pub const fn finger_joint(finger: usize, level: usize) -> usize {
    1 + JOINTS_PER_FINGER * finger + level
}

pub const INDEX_MCP: usize = finger_joint(1, 0);
pub const MIDDLE_MCP: usize = finger_joint(2, 0);
pub const RING_MCP: usize = finger_joint(3, 0);
pub const PINKY_MCP: usize = finger_joint(4, 0);
/// The four MCP joints rigidly attached to the wrist, index to pinky.
pub const PALM_MCPS: [usize; 4] = [INDEX_MCP, MIDDLE_MCP, RING_MCP, PINKY_MCP];

pub type Params = SVector<f64, PARAM_COUNT>;
pub type Theta = SVector<f64, THETA_COUNT>;
/// Absolute (or root-relative, depending on context) 3D joint positions in meters.
pub type JointPositions = [Vector3<f64>; JOINT_COUNT];
/// Per-joint 2D image points in pixels.
pub type ImagePoints = [Vector2<f64>; JOINT_COUNT];

/// Hand pose: root translation `t` (meters), root rotation `r` as intrinsic
/// XYZ Euler angles (radians), and the 20 articulation angles `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseDoc", try_from = "PoseDoc")]
pub struct HandPose {
    pub t: Vector3<f64>,
    pub r: Vector3<f64>,
    pub theta: Theta,
}

impl HandPose {
    pub fn new(t: Vector3<f64>, r: Vector3<f64>, theta: Theta) -> Self {
        Self { t, r, theta }
    }

    /// Open hand with identity rotation at `t`.
    pub fn neutral(t: Vector3<f64>) -> Self {
        Self::new(t, Vector3::zeros(), Theta::zeros())
    }

    pub fn from_params(params: &Params) -> Self {
        Self {
            t: params.fixed_rows::<3>(0).into_owned(),
            r: params.fixed_rows::<3>(3).into_owned(),
            theta: params.fixed_rows::<THETA_COUNT>(6).into_owned(),
        }
    }

    pub fn to_params(&self) -> Params {
        let mut p = Params::zeros();
        p.fixed_rows_mut::<3>(0).copy_from(&self.t);
        p.fixed_rows_mut::<3>(3).copy_from(&self.r);
        p.fixed_rows_mut::<THETA_COUNT>(6).copy_from(&self.theta);
        p
    }

    pub fn is_finite(&self) -> bool {
        self.t
            .iter()
            .chain(self.r.iter())
            .chain(self.theta.iter())
            .all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "hand pose has non-finite parameters".into(),
            ))
        }
    }

    /// Backward difference `self - prev`, with the rotation components wrapped
    /// to (-pi, pi].
    pub fn velocity_from(&self, prev: &HandPose) -> Params {
        let mut v = self.to_params() - prev.to_params();
        for i in 3..6 {
            v[i] = rotation::wrap_angle(v[i]);
        }
        v
    }
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    t: [f64; 3],
    r: [f64; 3],
    theta: Vec<f64>,
}

impl From<HandPose> for PoseDoc {
    fn from(p: HandPose) -> Self {
        Self {
            t: p.t.into(),
            r: p.r.into(),
            theta: p.theta.iter().copied().collect(),
        }
    }
}

impl TryFrom<PoseDoc> for HandPose {
    type Error = String;

    fn try_from(doc: PoseDoc) -> std::result::Result<Self, String> {
        if doc.theta.len() != THETA_COUNT {
            return Err(format!(
                "theta must have {THETA_COUNT} entries, got {}",
                doc.theta.len()
            ));
        }
        let pose = HandPose::new(
            Vector3::from(doc.t),
            Vector3::from(doc.r),
            Theta::from_column_slice(&doc.theta),
        );
        if !pose.is_finite() {
            return Err("pose has non-finite parameters".into());
        }
        Ok(pose)
    }
}
