//! Fitting energy: 2D reprojection, root-relative 3D articulation, joint
//! limits and temporal smoothness, each with an analytic gradient.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::hand_model::{
    HandPose, ImagePoints, JointPositions, Kinematics, Params, Skeleton, Theta, JOINT_COUNT,
    MIDDLE_MCP, PARAM_COUNT, THETA_COUNT, WRIST,
};

/// Constant cost (px²) of a joint at or behind the camera plane.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e8;
/// Quadratic stiffness (px²/m²) pushing such a joint back towards +z.
pub const BEHIND_CAMERA_STIFFNESS: f64 = 1e10;

/// One frame of detector output.
///
/// `x` follows the normalized convention: middle MCP at the origin and unit
/// wrist–middle-MCP distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub u: ImagePoints,
    pub omega: [f64; JOINT_COUNT],
    pub x: JointPositions,
}

impl FramePrediction {
    pub fn new(u: ImagePoints, omega: [f64; JOINT_COUNT], x: JointPositions) -> Result<Self> {
        if let Some(j) = omega.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "confidence of joint {j} must be finite and non-negative, got {}",
                omega[j]
            )));
        }
        let finite = u.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && x.iter().all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput(
                "prediction has non-finite coordinates".into(),
            ));
        }
        Ok(Self { u, omega, x })
    }

    /// Re-expresses `x` with the middle MCP at the origin and unit
    /// wrist–middle-MCP distance.
    pub fn renormalized(&self) -> Result<Self> {
        Ok(Self {
            x: normalize_relative(&self.x)?,
            ..self.clone()
        })
    }
}

/// Translates `points` so the middle MCP is the origin and scales them so
/// the wrist is at unit distance.
pub fn normalize_relative(points: &JointPositions) -> Result<JointPositions> {
    let origin = points[MIDDLE_MCP];
    let scale = (points[WRIST] - origin).norm();
    if !(scale.is_finite() && scale > 1e-12) {
        return Err(Error::DegenerateInput(
            "wrist and middle MCP coincide; cannot normalize 3D prediction".into(),
        ));
    }
    if origin == Vector3::zeros() && (scale - 1.0).abs() < 1e-12 {
        return Ok(*points);
    }
    Ok(points.map(|p| (p - origin) / scale))
}

/// User-specific root-relative targets in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTargets {
    pub z: JointPositions,
}

/// Term weights. The defaults put 100 px of reprojection error and 10 cm of
/// relative 3D error on the same footing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct EnergyWeights {
    pub w2d: f64,
    pub w3d: f64,
    pub wlimits: f64,
    pub wtemp: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            w2d: 1e-4,
            w3d: 100.0,
            wlimits: 10.0,
            wtemp: 0.1,
        }
    }
}

impl EnergyWeights {
    pub fn new(w2d: f64, w3d: f64, wlimits: f64, wtemp: f64) -> Result<Self> {
        let w = [w2d, w3d, wlimits, wtemp];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "energy weights must be >= 0, got {w:?}"
            )));
        }
        Ok(Self {
            w2d,
            w3d,
            wlimits,
            wtemp,
        })
    }
}

#[derive(Deserialize)]
struct RawWeights {
    w2d: f64,
    w3d: f64,
    wlimits: f64,
    wtemp: f64,
}

impl TryFrom<RawWeights> for EnergyWeights {
    type Error = Error;

    fn try_from(r: RawWeights) -> Result<Self> {
        Self::new(r.w2d, r.w3d, r.wlimits, r.wtemp)
    }
}

/// Previous-frame state for the temporal term.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPrior {
    pub prev_pose: HandPose,
    pub prev_velocity: Params,
}

/// Energy value with its gradient w.r.t. the 26 pose parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub gradient: Params,
}

/// Rescales the predicted bones to the skeleton's lengths, walking from the
/// wrist to the tips.
pub fn normalize_targets(skeleton: &Skeleton, pred: &FramePrediction) -> Result<RelativeTargets> {
    let mut z = [Vector3::zeros(); JOINT_COUNT];
    for j in 1..JOINT_COUNT {
        let p = skeleton.parent(j).expect("non-root joint");
        let bone = pred.x[j] - pred.x[p];
        let len = bone.norm();
        if !(len > 0.0) {
            return Err(Error::DegeneratePrediction {
                joint: j,
                name: skeleton.joint(j).name.clone(),
            });
        }
        z[j] = z[p] + bone * (skeleton.bone_length(j) / len);
    }
    Ok(RelativeTargets { z })
}

fn e2d_kin(
    kin: &Kinematics,
    skeleton: &Skeleton,
    pred: &FramePrediction,
    cam: &CameraIntrinsics,
    scale: f64,
    mut grad: Option<&mut Params>,
) -> f64 {
    let mut value = 0.0;
    for j in 0..JOINT_COUNT {
        let w = pred.omega[j];
        if w == 0.0 {
            continue;
        }
        let m = kin.absolute_joint(j);
        if m.z <= MIN_DEPTH {
            let gap = MIN_DEPTH - m.z;
            value += w * (BEHIND_CAMERA_PENALTY + BEHIND_CAMERA_STIFFNESS * gap * gap);
            if let Some(g) = grad.as_deref_mut() {
                let dz = Vector3::new(0.0, 0.0, -2.0 * scale * w * BEHIND_CAMERA_STIFFNESS * gap);
                kin.accumulate(skeleton, j, &dz, false, g);
            }
            continue;
        }
        let r = cam.project_unchecked(&m) - pred.u[j];
        value += w * r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            let g3 = cam.project_jacobian_unchecked(&m).transpose() * (r * (2.0 * scale * w));
            kin.accumulate(skeleton, j, &g3, false, g);
        }
    }
    value * scale
}

fn e3d_kin(
    kin: &Kinematics,
    skeleton: &Skeleton,
    targets: &RelativeTargets,
    scale: f64,
    mut grad: Option<&mut Params>,
) -> f64 {
    let mut value = 0.0;
    for j in 1..JOINT_COUNT {
        let r = kin.rel[j] - targets.z[j];
        value += r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            kin.accumulate(skeleton, j, &(r * (2.0 * scale)), true, g);
        }
    }
    value * scale
}

fn elimits_theta(
    skeleton: &Skeleton,
    theta: &Theta,
    scale: f64,
    mut grad: Option<&mut Params>,
) -> f64 {
    let (lo, hi) = (skeleton.theta_min(), skeleton.theta_max());
    let mut value = 0.0;
    for k in 0..THETA_COUNT {
        let over = theta[k] - hi[k];
        let under = lo[k] - theta[k];
        let d = if over > 0.0 {
            over
        } else if under > 0.0 {
            -under
        } else {
            continue;
        };
        value += d * d;
        if let Some(g) = grad.as_deref_mut() {
            g[6 + k] += 2.0 * scale * d;
        }
    }
    value * scale
}

fn etemp_pose(
    pose: &HandPose,
    prior: &TemporalPrior,
    scale: f64,
    grad: Option<&mut Params>,
) -> f64 {
    let diff = prior.prev_velocity - pose.velocity_from(&prior.prev_pose);
    if let Some(g) = grad {
        *g -= diff * (2.0 * scale);
    }
    diff.norm_squared() * scale
}

/// 2D term `Σ ω_j ‖Π(M_j) − u_j‖²` in px².
pub fn e2d(
    skeleton: &Skeleton,
    pose: &HandPose,
    pred: &FramePrediction,
    cam: &CameraIntrinsics,
) -> Result<TermValue> {
    let kin = Kinematics::compute(skeleton, pose)?;
    let mut gradient = Params::zeros();
    let value = e2d_kin(&kin, skeleton, pred, cam, 1.0, Some(&mut gradient));
    Ok(TermValue { value, gradient })
}

/// 3D term `Σ ‖(M_j − M_root) − z_j‖²` in m². Independent of `t`.
pub fn e3d(skeleton: &Skeleton, pose: &HandPose, targets: &RelativeTargets) -> Result<TermValue> {
    let kin = Kinematics::compute(skeleton, pose)?;
    let mut gradient = Params::zeros();
    let value = e3d_kin(&kin, skeleton, targets, 1.0, Some(&mut gradient));
    Ok(TermValue { value, gradient })
}

/// One-sided quadratic penalty outside `[theta_min, theta_max]`.
pub fn elimits(skeleton: &Skeleton, pose: &HandPose) -> TermValue {
    let mut gradient = Params::zeros();
    let value = elimits_theta(skeleton, &pose.theta, 1.0, Some(&mut gradient));
    TermValue { value, gradient }
}

/// `‖∇Θ_prev − ∇Θ‖²` with `∇Θ = Θ − Θ_prev`.
pub fn etemp(pose: &HandPose, prev_pose: &HandPose, prev_velocity: &Params) -> TermValue {
    let prior = TemporalPrior {
        prev_pose: prev_pose.clone(),
        prev_velocity: *prev_velocity,
    };
    let mut gradient = Params::zeros();
    let value = etemp_pose(pose, &prior, 1.0, Some(&mut gradient));
    TermValue { value, gradient }
}

/// Everything the fitting energy of one frame depends on besides the pose.
#[derive(Debug, Clone, Copy)]
pub struct FitProblem<'a> {
    pub skeleton: &'a Skeleton,
    pub pred: &'a FramePrediction,
    pub targets: &'a RelativeTargets,
    pub cam: &'a CameraIntrinsics,
    pub weights: &'a EnergyWeights,
    /// `None` on the first frame of a sequence.
    pub temporal: Option<&'a TemporalPrior>,
}

impl FitProblem<'_> {
    fn eval(&self, pose: &HandPose, mut grad: Option<&mut Params>) -> Result<f64> {
        let kin = Kinematics::compute(self.skeleton, pose)?;
        let w = self.weights;
        let mut value = 0.0;
        if w.w2d > 0.0 {
            value += e2d_kin(
                &kin,
                self.skeleton,
                self.pred,
                self.cam,
                w.w2d,
                grad.as_deref_mut(),
            );
        }
        if w.w3d > 0.0 {
            value += e3d_kin(
                &kin,
                self.skeleton,
                self.targets,
                w.w3d,
                grad.as_deref_mut(),
            );
        }
        if w.wlimits > 0.0 {
            value += elimits_theta(self.skeleton, &pose.theta, w.wlimits, grad.as_deref_mut());
        }
        if let (Some(prior), true) = (self.temporal, w.wtemp > 0.0) {
            value += etemp_pose(pose, prior, w.wtemp, grad);
        }
        Ok(value)
    }

    pub fn value(&self, pose: &HandPose) -> Result<f64> {
        self.eval(pose, None)
    }

    pub fn value_and_gradient(&self, pose: &HandPose) -> Result<TermValue> {
        let mut gradient = Params::zeros();
        let value = self.eval(pose, Some(&mut gradient))?;
        Ok(TermValue { value, gradient })
    }

    /// Diagonal of the Gauss–Newton approximation `2 JᵀJ` of the Hessian,
    /// where `J` stacks the weighted residual Jacobians of all four terms.
    pub fn gauss_newton_diagonal(&self, pose: &HandPose) -> Result<Params> {
        let kin = Kinematics::compute(self.skeleton, pose)?;
        let jac = kin.jacobian(self.skeleton);
        let w = self.weights;
        let mut diag = Params::zeros();
        for j in 0..JOINT_COUNT {
            let block = jac.fixed_rows::<3>(3 * j);
            let omega = self.pred.omega[j];
            if w.w2d > 0.0 && omega > 0.0 {
                let m = kin.absolute_joint(j);
                let scale = 2.0 * w.w2d * omega;
                if m.z > MIN_DEPTH {
                    let image = self.cam.project_jacobian_unchecked(&m) * block;
                    for k in 0..PARAM_COUNT {
                        diag[k] += scale * image.column(k).norm_squared();
                    }
                } else {
                    for k in 0..PARAM_COUNT {
                        diag[k] += scale * BEHIND_CAMERA_STIFFNESS * block[(2, k)].powi(2);
                    }
                }
            }
            if w.w3d > 0.0 && j != WRIST {
                for k in 3..PARAM_COUNT {
                    diag[k] += 2.0 * w.w3d * block.column(k).norm_squared();
                }
            }
        }
        if w.wlimits > 0.0 {
            let (lo, hi) = (self.skeleton.theta_min(), self.skeleton.theta_max());
            for k in 0..THETA_COUNT {
                if pose.theta[k] > hi[k] || pose.theta[k] < lo[k] {
                    diag[6 + k] += 2.0 * w.wlimits;
                }
            }
        }
        if self.temporal.is_some() && w.wtemp > 0.0 {
            diag.add_scalar_mut(2.0 * w.wtemp);
        }
        Ok(diag)
    }
}

/// Weighted sum of the four terms. `temporal` is `None` when there is no
/// previous frame, which disables the temporal term.
pub fn total_energy(
    skeleton: &Skeleton,
    pose: &HandPose,
    pred: &FramePrediction,
    targets: &RelativeTargets,
    cam: &CameraIntrinsics,
    weights: &EnergyWeights,
    temporal: Option<&TemporalPrior>,
) -> Result<TermValue> {
    FitProblem {
        skeleton,
        pred,
        targets,
        cam,
        weights,
        temporal,
    }
    .value_and_gradient(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{finger_joint, forward_kinematics, INDEX_MCP};
    use nalgebra::Vector2;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn pose() -> HandPose {
        let mut theta = Theta::zeros();
        theta[4] = 0.4;
        theta[6] = 0.8;
        theta[9] = -0.1;
        HandPose::new(
            Vector3::new(0.02, 0.05, 0.45),
            Vector3::new(0.2, -0.3, 0.1),
            theta,
        )
    }

    /// Exact prediction of `pose`.
    fn exact_prediction(s: &Skeleton, pose: &HandPose) -> FramePrediction {
        let m = forward_kinematics(s, pose).unwrap();
        let u = std::array::from_fn(|j| cam().project(&m[j]).unwrap());
        FramePrediction::new(u, [1.0; JOINT_COUNT], normalize_relative(&m).unwrap()).unwrap()
    }

    #[test]
    fn normalization_of_consistent_prediction_is_wrist_relative_identity() {
        let s = Skeleton::default_hand();
        let p = pose();
        let m = forward_kinematics(&s, &p).unwrap();
        let pred =
            FramePrediction::new([Vector2::zeros(); JOINT_COUNT], [1.0; JOINT_COUNT], m).unwrap();
        let z = normalize_targets(&s, &pred).unwrap();
        for j in 0..JOINT_COUNT {
            assert!((z.z[j] - (m[j] - m[WRIST])).norm() < 1e-12);
        }
    }

    #[test]
    fn normalization_undoes_uniform_scale_on_a_chain() {
        // Hand-worked recursion on the chain wrist -> index MCP -> index PIP.
        let s = Skeleton::default_hand();
        let m = forward_kinematics(&s, &pose()).unwrap();
        let doubled = m.map(|p| (p - m[WRIST]) * 2.0);
        let pred =
            FramePrediction::new([Vector2::zeros(); JOINT_COUNT], [1.0; JOINT_COUNT], doubled)
                .unwrap();
        let z = normalize_targets(&s, &pred).unwrap();
        let mcp = INDEX_MCP;
        let pip = finger_joint(1, 1);
        let z_mcp = doubled[mcp] * (s.bone_length(mcp) / doubled[mcp].norm());
        let bone = doubled[pip] - doubled[mcp];
        let z_pip = z_mcp + bone * (s.bone_length(pip) / bone.norm());
        assert!((z.z[mcp] - z_mcp).norm() < 1e-15);
        assert!((z.z[pip] - z_pip).norm() < 1e-15);
        for j in 0..JOINT_COUNT {
            assert!((z.z[j] - (m[j] - m[WRIST])).norm() < 1e-12);
        }
    }

    #[test]
    fn normalized_targets_have_model_bone_lengths() {
        let s = Skeleton::default_hand();
        let mut x = forward_kinematics(&s, &pose()).unwrap();
        x[7] += Vector3::new(0.3, -0.1, 0.2);
        let pred =
            FramePrediction::new([Vector2::zeros(); JOINT_COUNT], [1.0; JOINT_COUNT], x).unwrap();
        let z = normalize_targets(&s, &pred).unwrap();
        assert_eq!(z.z[WRIST], Vector3::zeros());
        for j in 1..JOINT_COUNT {
            let d = (z.z[j] - z.z[s.parent(j).unwrap()]).norm();
            assert!((d - s.bone_length(j)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_predicted_bone_names_joint() {
        let s = Skeleton::default_hand();
        let mut pred = exact_prediction(&s, &pose());
        pred.x[finger_joint(1, 1)] = pred.x[INDEX_MCP];
        match normalize_targets(&s, &pred) {
            Err(Error::DegeneratePrediction { joint, name }) => {
                assert_eq!(joint, 6);
                assert_eq!(name, "index_pip");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perfect_fit_terms_vanish() {
        let s = Skeleton::default_hand();
        let p = pose();
        let pred = exact_prediction(&s, &p);
        let t2 = e2d(&s, &p, &pred, &cam()).unwrap();
        assert!(t2.value < 1e-18);
        assert!(t2.gradient.norm() < 1e-6);
        let targets = normalize_targets(&s, &pred).unwrap();
        let t3 = e3d(&s, &p, &targets).unwrap();
        assert!(t3.value < 1e-24);
    }

    #[test]
    fn single_joint_offset_by_two_pixels() {
        let s = Skeleton::default_hand();
        let p = pose();
        let mut pred = exact_prediction(&s, &p);
        pred.omega = [0.0; JOINT_COUNT];
        pred.omega[8] = 1.0;
        pred.u[8] += Vector2::new(2.0, 0.0);
        let v = e2d(&s, &p, &pred, &cam()).unwrap().value;
        assert!((v - 4.0).abs() < 1e-9);
    }

    #[test]
    fn e2d_linear_in_confidence() {
        let s = Skeleton::default_hand();
        let p = pose();
        let mut pred = exact_prediction(&s, &p);
        for (j, u) in pred.u.iter_mut().enumerate() {
            *u += Vector2::new(j as f64 * 0.3, -1.5);
        }
        let a = e2d(&s, &p, &pred, &cam()).unwrap();
        pred.omega = pred.omega.map(|w| w * 2.0);
        let b = e2d(&s, &p, &pred, &cam()).unwrap();
        assert!((b.value - 2.0 * a.value).abs() <= 1e-12 * a.value);
        assert!((b.gradient - a.gradient * 2.0).norm() <= 1e-12 * a.gradient.norm());
    }

    #[test]
    fn behind_camera_joint_is_penalized_and_repelled() {
        let s = Skeleton::default_hand();
        let mut p = HandPose::neutral(Vector3::new(0.0, 0.0, -0.1));
        p.theta[4] = 0.2;
        let pred = exact_prediction(&s, &pose());
        let t = e2d(&s, &p, &pred, &cam()).unwrap();
        assert!(t.value >= JOINT_COUNT as f64 * BEHIND_CAMERA_PENALTY);
        // descending the gradient moves the hand to +z
        assert!(t.gradient[2] < 0.0);
    }

    #[test]
    fn e3d_translation_invariance_is_exact() {
        let s = Skeleton::default_hand();
        let p = pose();
        let mut pred = exact_prediction(&s, &p);
        pred.x[12] += Vector3::new(0.1, 0.05, -0.2);
        let targets = normalize_targets(&s, &pred).unwrap();
        let a = e3d(&s, &p, &targets).unwrap();
        assert_eq!(&a.gradient.as_slice()[..3], &[0.0; 3]);
        let mut shifted = p.clone();
        shifted.t += Vector3::new(1.234, -0.71, 3.3);
        let b = e3d(&s, &shifted, &targets).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn limits_interior_and_violations() {
        let s = Skeleton::default_hand();
        let mut p = HandPose::neutral(Vector3::new(0.0, 0.0, 0.45));
        p.theta = (s.theta_min() + s.theta_max()) * 0.5;
        assert_eq!(elimits(&s, &p).value, 0.0);

        p.theta[6] = s.theta_max()[6] + 0.1;
        let t = elimits(&s, &p);
        assert!((t.value - 0.01).abs() < 1e-15);
        assert!((t.gradient[12] - 0.2).abs() < 1e-14);

        p.theta = (s.theta_min() + s.theta_max()) * 0.5;
        p.theta[9] = s.theta_min()[9] - 0.2;
        let t = elimits(&s, &p);
        assert!((t.value - 0.04).abs() < 1e-15);
        assert!((t.gradient[15] + 0.4).abs() < 1e-14);
    }

    #[test]
    fn limits_subgradient_zero_at_boundary() {
        let s = Skeleton::default_hand();
        let mut p = HandPose::neutral(Vector3::zeros());
        p.theta = *s.theta_max();
        let t = elimits(&s, &p);
        assert_eq!(t.value, 0.0);
        assert_eq!(t.gradient, Params::zeros());
        // one-sided derivative just outside is 2δ
        let delta = 1e-3;
        p.theta[0] += delta;
        assert!((elimits(&s, &p).gradient[6] - 2.0 * delta).abs() < 1e-12);
    }

    #[test]
    fn temporal_term_cases() {
        let prev = pose();
        let v = Params::from_fn(|i, _| 0.01 * (i as f64 - 10.0));
        let next = HandPose::from_params(&(prev.to_params() + v));
        let t = etemp(&next, &prev, &v);
        assert!(t.value < 1e-28);

        assert_eq!(etemp(&prev, &prev, &Params::zeros()).value, 0.0);

        let off = Params::from_fn(|i, _| if i % 3 == 0 { 0.02 } else { -0.01 });
        let perturbed = HandPose::from_params(&(prev.to_params() + v + off));
        let t = etemp(&perturbed, &prev, &v);
        assert!((t.value - off.norm_squared()).abs() < 1e-14);
        assert!((t.gradient - off * 2.0).norm() < 1e-12);
    }

    #[test]
    fn temporal_term_wraps_rotation() {
        let mut prev = pose();
        prev.r.z = 3.1;
        let mut next = prev.clone();
        next.r.z = -3.1;
        let step = 2.0 * std::f64::consts::PI - 6.2;
        let t = etemp(&next, &prev, &Params::zeros());
        assert!((t.value - step * step).abs() < 1e-12);
    }

    #[test]
    fn selector_weights_and_sum_of_gradients() {
        let s = Skeleton::default_hand();
        let p = pose();
        let mut pred = exact_prediction(&s, &p);
        pred.u[3] += Vector2::new(4.0, -2.0);
        pred.x[15] += Vector3::new(0.05, 0.0, 0.1);
        let targets = normalize_targets(&s, &pred).unwrap();
        let mut q = p.clone();
        q.theta[7] = 2.0;
        q.t.x += 0.01;
        let prior = TemporalPrior {
            prev_pose: p.clone(),
            prev_velocity: Params::from_element(0.003),
        };

        let only2d = EnergyWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let total = total_energy(&s, &q, &pred, &targets, &cam(), &only2d, Some(&prior)).unwrap();
        assert_eq!(total, e2d(&s, &q, &pred, &cam()).unwrap());

        let w = EnergyWeights::new(1e-4, 1.0, 10.0, 0.1).unwrap();
        let total = total_energy(&s, &q, &pred, &targets, &cam(), &w, Some(&prior)).unwrap();
        let parts = [
            (w.w2d, e2d(&s, &q, &pred, &cam()).unwrap()),
            (w.w3d, e3d(&s, &q, &targets).unwrap()),
            (w.wlimits, elimits(&s, &q)),
            (w.wtemp, etemp(&q, &prior.prev_pose, &prior.prev_velocity)),
        ];
        let value: f64 = parts.iter().map(|(k, t)| k * t.value).sum();
        let grad = parts
            .iter()
            .fold(Params::zeros(), |acc, (k, t)| acc + t.gradient * *k);
        assert!((total.value - value).abs() < 1e-12);
        assert!((total.gradient - grad).norm() < 1e-12);
    }

    #[test]
    fn perfect_fit_with_matched_velocity_is_zero() {
        let s = Skeleton::default_hand();
        let p = pose();
        let pred = exact_prediction(&s, &p);
        let targets = normalize_targets(&s, &pred).unwrap();
        let v = Params::from_element(0.002);
        let prev = HandPose::from_params(&(p.to_params() - v));
        let prior = TemporalPrior {
            prev_pose: prev,
            prev_velocity: v,
        };
        let t = total_energy(
            &s,
            &p,
            &pred,
            &targets,
            &cam(),
            &EnergyWeights::default(),
            Some(&prior),
        )
        .unwrap();
        assert!(t.value < 1e-20, "{}", t.value);
    }

    #[test]
    fn gauss_newton_diagonal_matches_jacobian_columns() {
        let s = Skeleton::default_hand();
        let p = pose();
        let pred = exact_prediction(&s, &p);
        let targets = normalize_targets(&s, &pred).unwrap();
        let w = EnergyWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let problem = FitProblem {
            skeleton: &s,
            pred: &pred,
            targets: &targets,
            cam: &cam(),
            weights: &w,
            temporal: None,
        };
        // At a perfect fit the Hessian is exactly 2 JᵀJ; compare its
        // diagonal against second differences of the energy.
        let diag = problem.gauss_newton_diagonal(&p).unwrap();
        let base = p.to_params();
        let h = 1e-5;
        for k in 0..PARAM_COUNT {
            let mut plus = base;
            let mut minus = base;
            plus[k] += h;
            minus[k] -= h;
            let e = |x: &Params| problem.value(&HandPose::from_params(x)).unwrap();
            let second = (e(&plus) - 2.0 * e(&base) + e(&minus)) / (h * h);
            assert!(
                (second - diag[k]).abs() <= 1e-3 * diag[k].max(1.0),
                "param {k}: {second} vs {}",
                diag[k]
            );
        }
    }

    #[test]
    fn renormalize_prediction() {
        let s = Skeleton::default_hand();
        let mut pred = exact_prediction(&s, &pose());
        pred.x = pred.x.map(|p| p * 2.0 + Vector3::new(1.0, 2.0, 3.0));
        let n = pred.renormalized().unwrap();
        assert!(n.x[MIDDLE_MCP].norm() < 1e-15);
        assert!((n.x[WRIST].norm() - 1.0).abs() < 1e-12);
        let mut bad = pred.clone();
        bad.x[WRIST] = bad.x[MIDDLE_MCP];
        assert!(bad.renormalized().is_err());
    }

    #[test]
    fn rejects_negative_weights_and_confidences() {
        assert!(EnergyWeights::new(-1.0, 0.0, 0.0, 0.0).is_err());
        let mut omega = [1.0; JOINT_COUNT];
        omega[2] = -0.5;
        assert!(FramePrediction::new(
            [Vector2::zeros(); JOINT_COUNT],
            omega,
            [Vector3::zeros(); JOINT_COUNT]
        )
        .is_err());
    }
}
