use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{
    finger_joint, Theta, FINGER_COUNT, JOINTS_PER_FINGER, JOINT_COUNT, THETA_COUNT, WRIST,
};
use crate::error::{Error, Result};

const DEFAULT_SKELETON_JSON: &str = include_str!("../../data/default_skeleton.json");
const UNIT_TOLERANCE: f64 = 1e-9;

/// One rotational degree of freedom of a joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Dof {
    /// Unit rotation axis, expressed in the joint frame before this DOF
    /// (and any later DOF of the same joint) is applied.
    pub axis: Vector3<f64>,
    pub theta_index: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Distance to the parent joint in meters; zero for the wrist.
    pub bone_length: f64,
    /// Unit direction from the parent, in the parent's frame.
    pub rest_offset: Vector3<f64>,
    /// DOFs applied in order.
    pub dofs: Vec<Dof>,
}

/// Validated 21-joint kinematic tree.
///
/// Joint `0` is the wrist; every finger is a 4-joint chain hanging off it in
/// the fixed order thumb, index, middle, ring, pinky. Joints are stored so a
/// parent always precedes its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SkeletonDoc", try_from = "SkeletonDoc")]
pub struct Skeleton {
    joints: Vec<Joint>,
    theta_min: Theta,
    theta_max: Theta,
    /// Joint owning each theta entry.
    dof_owner: [usize; THETA_COUNT],
    /// Theta entries that move each joint (DOFs of strict ancestors).
    influencing: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidInput(format!("skeleton: {msg}")));
        if joints.len() != JOINT_COUNT {
            return invalid(format!(
                "expected {JOINT_COUNT} joints, got {}",
                joints.len()
            ));
        }
        for (j, joint) in joints.iter().enumerate() {
            let expected = expected_parent(j);
            if joint.parent != expected {
                return invalid(format!(
                    "joint {j} ({}) has parent {:?}, expected {:?}",
                    joint.name, joint.parent, expected
                ));
            }
            let is_tip = j != WRIST && (j - 1) % JOINTS_PER_FINGER == JOINTS_PER_FINGER - 1;
            if (j == WRIST || is_tip) && !joint.dofs.is_empty() {
                return invalid(format!("joint {j} ({}) must not carry DOFs", joint.name));
            }
            if j != WRIST {
                if !(joint.bone_length.is_finite() && joint.bone_length > 0.0) {
                    return invalid(format!(
                        "joint {j} ({}) has non-positive bone length",
                        joint.name
                    ));
                }
                if (joint.rest_offset.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return invalid(format!(
                        "joint {j} ({}) rest_offset is not unit length",
                        joint.name
                    ));
                }
                if !is_tip && !(1..=2).contains(&joint.dofs.len()) {
                    return invalid(format!("joint {j} ({}) must have 1 or 2 DOFs", joint.name));
                }
            }
            for dof in &joint.dofs {
                if (dof.axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return invalid(format!(
                        "joint {j} ({}) has a non-unit DOF axis",
                        joint.name
                    ));
                }
                if !(dof.min.is_finite() && dof.max.is_finite() && dof.min <= dof.max) {
                    return invalid(format!(
                        "joint {j} ({}) has invalid angle limits",
                        joint.name
                    ));
                }
            }
        }

        let mut dof_owner = [usize::MAX; THETA_COUNT];
        let mut theta_min = Theta::zeros();
        let mut theta_max = Theta::zeros();
        let mut count = 0;
        for (j, joint) in joints.iter().enumerate() {
            for dof in &joint.dofs {
                count += 1;
                if dof.theta_index >= THETA_COUNT || dof_owner[dof.theta_index] != usize::MAX {
                    return invalid(format!(
                        "theta_index {} is out of range or reused",
                        dof.theta_index
                    ));
                }
                dof_owner[dof.theta_index] = j;
                theta_min[dof.theta_index] = dof.min;
                theta_max[dof.theta_index] = dof.max;
            }
        }
        if count != THETA_COUNT {
            return invalid(format!("expected {THETA_COUNT} DOFs in total, got {count}"));
        }

        let mut children = vec![Vec::new(); JOINT_COUNT];
        let mut influencing: Vec<Vec<usize>> = vec![Vec::new(); JOINT_COUNT];
        for j in 1..JOINT_COUNT {
            let p = joints[j].parent.expect("validated");
            children[p].push(j);
            let mut inf = influencing[p].clone();
            inf.extend(joints[p].dofs.iter().map(|d| d.theta_index));
            influencing[j] = inf;
        }

        Ok(Self {
            joints,
            theta_min,
            theta_max,
            dof_owner,
            influencing,
            children,
        })
    }

    /// Average adult hand shipped with the crate (an open, flat hand at zero angles).
    pub fn default_hand() -> Self {
        Self::from_json(DEFAULT_SKELETON_JSON).expect("bundled skeleton is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                Error::InvalidInput(format!("skeleton: {e}"))
            } else {
                Error::Json(e)
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, j: usize) -> &Joint {
        &self.joints[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn bone_length(&self, j: usize) -> f64 {
        self.joints[j].bone_length
    }

    pub fn bone_lengths(&self) -> [f64; JOINT_COUNT] {
        std::array::from_fn(|j| self.joints[j].bone_length)
    }

    pub fn theta_min(&self) -> &Theta {
        &self.theta_min
    }

    pub fn theta_max(&self) -> &Theta {
        &self.theta_max
    }

    /// Joint whose DOF drives `theta[index]`.
    pub fn dof_owner(&self, index: usize) -> usize {
        self.dof_owner[index]
    }

    /// Theta entries whose rotation moves joint `j`.
    pub fn influencing_dofs(&self, j: usize) -> &[usize] {
        &self.influencing[j]
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    /// Strict descendants of `j`.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[j].clone();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend_from_slice(&self.children[c]);
        }
        out.sort_unstable();
        out
    }

    /// Copy with new bone lengths; the wrist entry is ignored.
    pub fn with_bone_lengths(&self, lengths: &[f64; JOINT_COUNT]) -> Result<Self> {
        let mut joints = self.joints.clone();
        for (j, joint) in joints.iter_mut().enumerate().skip(1) {
            joint.bone_length = lengths[j];
        }
        Self::new(joints)
    }

    /// Copy with every bone scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let lengths = self.bone_lengths().map(|l| l * factor);
        self.with_bone_lengths(&lengths)
    }

    /// Copy with new angle limits indexed by theta entry.
    pub fn with_limits(&self, min: &Theta, max: &Theta) -> Result<Self> {
        let mut joints = self.joints.clone();
        for joint in &mut joints {
            for dof in &mut joint.dofs {
                dof.min = min[dof.theta_index];
                dof.max = max[dof.theta_index];
            }
        }
        Self::new(joints)
    }
}

fn expected_parent(j: usize) -> Option<usize> {
    if j == WRIST {
        return None;
    }
    let level = (j - 1) % JOINTS_PER_FINGER;
    let finger = (j - 1) / JOINTS_PER_FINGER;
    debug_assert!(finger < FINGER_COUNT);
    Some(if level == 0 {
        WRIST
    } else {
        finger_joint(finger, level - 1)
    })
}

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    joints: Vec<JointDoc>,
}

#[derive(Serialize, Deserialize)]
struct JointDoc {
    name: String,
    parent: Option<usize>,
    bone_length_m: f64,
    rest_offset: [f64; 3],
    dofs: Vec<DofDoc>,
}

#[derive(Serialize, Deserialize)]
struct DofDoc {
    axis: [f64; 3],
    theta_index: usize,
    min_rad: f64,
    max_rad: f64,
}

impl From<Skeleton> for SkeletonDoc {
    fn from(s: Skeleton) -> Self {
        let joints = s
            .joints
            .into_iter()
            .map(|j| JointDoc {
                name: j.name,
                parent: j.parent,
                bone_length_m: j.bone_length,
                rest_offset: j.rest_offset.into(),
                dofs: j
                    .dofs
                    .into_iter()
                    .map(|d| DofDoc {
                        axis: d.axis.into(),
                        theta_index: d.theta_index,
                        min_rad: d.min,
                        max_rad: d.max,
                    })
                    .collect(),
            })
            .collect();
        Self { joints }
    }
}

impl TryFrom<SkeletonDoc> for Skeleton {
    type Error = Error;

    fn try_from(doc: SkeletonDoc) -> Result<Self> {
        let joints = doc
            .joints
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                parent: j.parent,
                bone_length: j.bone_length_m,
                rest_offset: Vector3::from(j.rest_offset),
                dofs: j
                    .dofs
                    .into_iter()
                    .map(|d| Dof {
                        axis: Vector3::from(d.axis),
                        theta_index: d.theta_index,
                        min: d.min_rad,
                        max: d.max_rad,
                    })
                    .collect(),
            })
            .collect();
        Skeleton::new(joints)
    }
}
