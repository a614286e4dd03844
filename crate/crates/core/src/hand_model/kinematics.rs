use nalgebra::{Matrix3, SMatrix, Vector3};

use super::rotation::{axis_angle, euler_axes, euler_to_matrix};
use super::{
    HandPose, JointPositions, Params, Skeleton, JOINT_COUNT, PARAM_COUNT, THETA_COUNT, WRIST,
};
use crate::error::Result;

/// Derivative of the stacked joint positions (joint `j` at rows `3j..3j+3`)
/// w.r.t. the 26 pose parameters.
pub type PoseJacobian = SMatrix<f64, { 3 * JOINT_COUNT }, PARAM_COUNT>;

/// Forward kinematics state shared by positions, Jacobians and gradients.
///
/// Positions are kept root-relative; absolute positions add `t` last so
/// that root-relative quantities are exactly independent of translation.
#[derive(Debug, Clone)]
pub(crate) struct Kinematics {
    pub t: Vector3<f64>,
    pub rel: JointPositions,
    /// World-frame rotation axis of each theta entry.
    pub dof_axes: [Vector3<f64>; THETA_COUNT],
    /// World-frame angular axes of the three Euler angles.
    pub rot_axes: [Vector3<f64>; 3],
}

impl Kinematics {
    pub fn compute(skeleton: &Skeleton, pose: &HandPose) -> Result<Self> {
        pose.ensure_finite()?;
        Ok(Self::compute_unchecked(skeleton, pose))
    }

    pub fn compute_unchecked(skeleton: &Skeleton, pose: &HandPose) -> Self {
        let mut frames = [Matrix3::identity(); JOINT_COUNT];
        let mut rel = [Vector3::zeros(); JOINT_COUNT];
        let mut dof_axes = [Vector3::zeros(); THETA_COUNT];
        frames[WRIST] = euler_to_matrix(&pose.r);

        for (j, joint) in skeleton.joints().iter().enumerate().skip(1) {
            let p = joint.parent.expect("non-root joint has a parent");
            rel[j] = rel[p] + frames[p] * (joint.rest_offset * joint.bone_length);
            let mut frame = frames[p];
            for dof in &joint.dofs {
                dof_axes[dof.theta_index] = frame * dof.axis;
                frame *= axis_angle(&dof.axis, pose.theta[dof.theta_index]);
            }
            frames[j] = frame;
        }

        Self {
            t: pose.t,
            rel,
            dof_axes,
            rot_axes: euler_axes(&pose.r),
        }
    }

    pub fn absolute(&self) -> JointPositions {
        self.rel.map(|p| p + self.t)
    }

    pub fn absolute_joint(&self, j: usize) -> Vector3<f64> {
        self.rel[j] + self.t
    }

    /// Column `k` of the derivative of joint `j`'s position, for `k >= 3`
    /// (rotation and articulation parameters).
    fn column(&self, skeleton: &Skeleton, j: usize, theta: usize) -> Vector3<f64> {
        let pivot = self.rel[skeleton.dof_owner(theta)];
        self.dof_axes[theta].cross(&(self.rel[j] - pivot))
    }

    /// Adds `J_jᵀ g` to `grad`, where `J_j` is the 3×26 Jacobian of joint `j`.
    /// With `relative` the translation block is skipped (the root-relative
    /// position does not depend on `t`).
    pub fn accumulate(
        &self,
        skeleton: &Skeleton,
        j: usize,
        g: &Vector3<f64>,
        relative: bool,
        grad: &mut Params,
    ) {
        if !relative {
            grad[0] += g.x;
            grad[1] += g.y;
            grad[2] += g.z;
        }
        if j == WRIST {
            return;
        }
        let moment = self.rel[j].cross(g);
        for (i, axis) in self.rot_axes.iter().enumerate() {
            grad[3 + i] += axis.dot(&moment);
        }
        for &k in skeleton.influencing_dofs(j) {
            grad[6 + k] += self.column(skeleton, j, k).dot(g);
        }
    }

    pub fn jacobian(&self, skeleton: &Skeleton) -> PoseJacobian {
        let mut jac = PoseJacobian::zeros();
        for j in 0..JOINT_COUNT {
            let row = 3 * j;
            jac.fixed_view_mut::<3, 3>(row, 0).fill_with_identity();
            if j == WRIST {
                continue;
            }
            for (i, axis) in self.rot_axes.iter().enumerate() {
                jac.fixed_view_mut::<3, 1>(row, 3 + i)
                    .copy_from(&axis.cross(&self.rel[j]));
            }
            for &k in skeleton.influencing_dofs(j) {
                jac.fixed_view_mut::<3, 1>(row, 6 + k)
                    .copy_from(&self.column(skeleton, j, k));
            }
        }
        jac
    }
}

/// Absolute 3D joint positions `M(Θ)`.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &HandPose) -> Result<JointPositions> {
    Ok(Kinematics::compute(skeleton, pose)?.absolute())
}

/// Analytic Jacobian of `forward_kinematics` w.r.t. `(t, r, theta)`.
pub fn jacobian(skeleton: &Skeleton, pose: &HandPose) -> Result<PoseJacobian> {
    Ok(Kinematics::compute(skeleton, pose)?.jacobian(skeleton))
}
