//! Per-frame minimization of the fitting energy.
//!
//! Each frame starts from the previous translation and articulation, with
//! the global rotation re-estimated from the predicted palm directions by
//! solving an orthogonal Procrustes problem. The energy is then minimized by
//! gradient descent with a backtracking (Armijo) line search.

use log::warn;
use nalgebra::{Matrix3, Matrix3x5, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::energy::{normalize_targets, EnergyWeights, FitProblem, FramePrediction, TemporalPrior};
use crate::error::{Error, Result};
use crate::hand_model::{
    forward_kinematics, rotation, HandPose, JointPositions, Params, Skeleton, PALM_MCPS, WRIST,
};
use crate::tracking::TrackerState;

/// First-frame wrist position: on the optical axis, 45 cm from the camera.
pub const FIRST_FRAME_TRANSLATION: Vector3<f64> = Vector3::new(0.0, 0.0, 0.45);

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
const PALM_EPS: f64 = 1e-9;
const ILL_CONDITIONED_SIGMA: f64 = 1e-9;

/// Columns: unit directions wrist→MCP for index, middle, ring and pinky,
/// then the palm normal `index × pinky`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmFrame(pub Matrix3x5<f64>);

impl PalmFrame {
    pub fn direction(&self, k: usize) -> Vector3<f64> {
        self.0.column(k).into_owned()
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.0.column(4).into_owned()
    }

    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self(r * self.0)
    }
}

/// Builds the palm frame of a set of joint positions (model points or
/// root-relative predictions alike; only differences to the wrist matter).
pub fn palm_frame(points: &JointPositions) -> Result<PalmFrame> {
    let mut z = Matrix3x5::zeros();
    for (k, &j) in PALM_MCPS.iter().enumerate() {
        let d = points[j] - points[WRIST];
        let n = d.norm();
        if !(n >= PALM_EPS) {
            return Err(Error::DegeneratePalm { joint: j });
        }
        z.set_column(k, &(d / n));
    }
    let normal = z.column(0).cross(&z.column(3));
    z.set_column(4, &normal);
    Ok(PalmFrame(z))
}

/// Palm frame of the model at identity global rotation.
pub fn model_palm_frame(skeleton: &Skeleton) -> PalmFrame {
    let m = forward_kinematics(skeleton, &HandPose::neutral(Vector3::zeros()))
        .expect("neutral pose is finite");
    palm_frame(&m).expect("validated skeleton has non-degenerate palm")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcrustesSolution {
    pub rotation: Matrix3<f64>,
    /// Second singular value of `Z̃ Z̄ᵀ` below threshold: the rotation is not
    /// uniquely determined.
    pub ill_conditioned: bool,
}

/// Rotation `R ∈ SO(3)` minimizing `‖R Z̄ − Z̃‖_F`.
pub fn procrustes_rotation(model: &PalmFrame, observed: &PalmFrame) -> ProcrustesSolution {
    let m: Matrix3<f64> = observed.0 * model.0.transpose();
    let svd = SVD::new(m, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let ill_conditioned = svd.singular_values[1] < ILL_CONDITIONED_SIGMA;
    if ill_conditioned {
        warn!(
            "palm alignment is ill-conditioned (singular values {:?})",
            svd.singular_values.as_slice()
        );
    }
    ProcrustesSolution {
        rotation,
        ill_conditioned,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Raw gradient steps.
    None,
    /// Scale each coordinate by the inverse Gauss–Newton diagonal.
    #[default]
    GaussNewtonDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Initial trial step of each line search.
    pub step_size: f64,
    /// Per-iteration decay of the initial trial step.
    pub step_decay: f64,
    /// Stop once the gradient norm drops to this value.
    pub grad_tol: f64,
    pub weights: EnergyWeights,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::real_time()
    }
}

impl SolverConfig {
    /// 50 iterations per frame.
    pub fn real_time() -> Self {
        Self {
            max_iters: 50,
            step_size: 1.0,
            step_decay: 1.0,
            grad_tol: 1e-12,
            weights: EnergyWeights::default(),
            preconditioner: Preconditioner::default(),
        }
    }

    /// 200 iterations per frame.
    pub fn accuracy() -> Self {
        Self {
            max_iters: 200,
            ..Self::real_time()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput("step_size must be > 0".into()));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::InvalidInput("step_decay must be in (0, 1]".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidInput("grad_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The rotation initialization fell back to the previous frame.
    pub rotation_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub pose: HandPose,
    pub diagnostics: SolveDiagnostics,
}

/// Initial pose for the current frame. Returns the pose and whether the
/// rotation had to fall back to the previous frame's.
pub fn initialize_frame(state: &TrackerState, pred: &FramePrediction) -> (HandPose, bool) {
    let mut pose = match &state.prev_pose {
        Some(prev) => prev.clone(),
        None => HandPose::neutral(FIRST_FRAME_TRANSLATION),
    };
    match palm_frame(&pred.x) {
        Ok(observed) => {
            let rotation = procrustes_rotation(&state.zbar, &observed).rotation;
            pose.r = rotation::matrix_to_euler(&rotation, &pose.r);
            (pose, false)
        }
        Err(e) => {
            warn!(
                "frame {}: {e}; keeping previous rotation",
                state.frame_index
            );
            (pose, true)
        }
    }
}

fn descent_direction(
    problem: &FitProblem<'_>,
    pose: &HandPose,
    grad: &Params,
    kind: Preconditioner,
) -> Result<Params> {
    match kind {
        Preconditioner::None => Ok(-grad),
        Preconditioner::GaussNewtonDiagonal => {
            let diag = problem.gauss_newton_diagonal(pose)?;
            let top = diag.max();
            if !(top > 0.0) {
                return Ok(-grad);
            }
            let floor = top * 1e-12;
            Ok(Params::from_fn(|i, _| -grad[i] / diag[i].max(floor)))
        }
    }
}

/// Gradient descent from `init`. Energy never increases across iterations.
pub fn minimize(
    problem: &FitProblem<'_>,
    init: HandPose,
    config: &SolverConfig,
) -> Result<(HandPose, SolveDiagnostics)> {
    config.validate()?;
    let mut pose = init;
    let mut current = problem.value_and_gradient(&pose)?;
    let diverged = |iterations: usize, last: &HandPose| Error::SolverDiverged {
        iterations,
        last_finite: Box::new(last.clone()),
    };
    if !current.value.is_finite() || !current.gradient.iter().all(|g| g.is_finite()) {
        return Err(diverged(0, &pose));
    }
    let initial_energy = current.value;
    let mut iterations = 0;
    let mut step = config.step_size;

    while iterations < config.max_iters {
        if current.gradient.norm() <= config.grad_tol {
            break;
        }
        let dir = descent_direction(problem, &pose, &current.gradient, config.preconditioner)?;
        if !dir.iter().all(|d| d.is_finite()) {
            return Err(diverged(iterations, &pose));
        }
        let slope = current.gradient.dot(&dir);
        if !(slope < 0.0) {
            break;
        }
        let base = pose.to_params();
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = HandPose::from_params(&(base + dir * alpha));
            let e = problem.value(&trial)?;
            if e.is_finite() && e <= current.value + ARMIJO_C * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        let evaluated = problem.value_and_gradient(&next)?;
        if !evaluated.value.is_finite() || !evaluated.gradient.iter().all(|g| g.is_finite()) {
            return Err(diverged(iterations, &pose));
        }
        pose = next;
        current = evaluated;
        iterations += 1;
        step *= config.step_decay;
    }

    pose.r = pose.r.map(rotation::wrap_angle);
    Ok((
        pose,
        SolveDiagnostics {
            initial_energy,
            final_energy: current.value,
            iterations,
            grad_norm: current.gradient.norm(),
            rotation_fallback: false,
        },
    ))
}

/// Fits one frame: normalizes the 3D prediction to the skeleton, initializes
/// the pose and minimizes the total energy.
pub fn solve_frame(
    skeleton: &Skeleton,
    pred: &FramePrediction,
    cam: &CameraIntrinsics,
    config: &SolverConfig,
    state: &TrackerState,
) -> Result<SolveOutcome> {
    let targets = normalize_targets(skeleton, pred)?;
    let (init, rotation_fallback) = initialize_frame(state, pred);
    let prior = state.prev_pose.as_ref().map(|prev| TemporalPrior {
        prev_pose: prev.clone(),
        prev_velocity: state.prev_velocity,
    });
    let problem = FitProblem {
        skeleton,
        pred,
        targets: &targets,
        cam,
        weights: &config.weights,
        temporal: prior.as_ref(),
    };
    let (pose, mut diagnostics) = minimize(&problem, init, config)?;
    diagnostics.rotation_fallback = rotation_fallback;
    Ok(SolveOutcome { pose, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{rotation::axis_angle, Theta, JOINT_COUNT};
    use crate::smoothing::OneEuroParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        axis_angle(
            &axis.normalize(),
            rng.random_range(0.0..std::f64::consts::PI),
        )
    }

    fn moderate_pose(rng: &mut impl Rng) -> HandPose {
        HandPose::new(
            Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.4..0.5),
            ),
            Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            Theta::from_fn(|_, _| rng.random_range(0.0..0.6)),
        )
    }

    fn exact_prediction(s: &Skeleton, pose: &HandPose) -> FramePrediction {
        let m = forward_kinematics(s, pose).unwrap();
        FramePrediction::new(
            m.map(|p| cam().project(&p).unwrap()),
            [1.0; JOINT_COUNT],
            crate::energy::normalize_relative(&m).unwrap(),
        )
        .unwrap()
    }

    fn fresh_state(s: &Skeleton) -> TrackerState {
        TrackerState::new(s, &cam(), OneEuroParams::default())
    }

    fn mean_joint_error(a: &JointPositions, b: &JointPositions) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / JOINT_COUNT as f64
    }

    #[test]
    fn procrustes_identity() {
        let z = model_palm_frame(&Skeleton::default_hand());
        let sol = procrustes_rotation(&z, &z);
        assert!((sol.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(!sol.ill_conditioned);
    }

    #[test]
    fn procrustes_recovers_exact_rotations() {
        let z = model_palm_frame(&Skeleton::default_hand());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r0 = random_rotation(&mut rng);
            let sol = procrustes_rotation(&z, &z.rotated(&r0));
            assert!((sol.rotation - r0).norm() < 1e-9);
        }
    }

    #[test]
    fn procrustes_is_proper_rotation_and_beats_sampling() {
        let z = model_palm_frame(&Skeleton::default_hand());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let noisy = PalmFrame(
                z.rotated(&random_rotation(&mut rng)).0
                    + Matrix3x5::from_fn(|_, _| rng.random_range(-0.3..0.3)),
            );
            let r = procrustes_rotation(&z, &noisy).rotation;
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let cost = |q: &Matrix3<f64>| (q * z.0 - noisy.0).norm_squared();
            let best = cost(&r);
            for _ in 0..5000 {
                assert!(best <= cost(&random_rotation(&mut rng)) + 1e-12);
            }
        }
    }

    #[test]
    fn procrustes_never_returns_reflection() {
        let z = model_palm_frame(&Skeleton::default_hand());
        let mirror = PalmFrame(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)) * z.0);
        let r = procrustes_rotation(&z, &mirror).rotation;
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_palm_is_ill_conditioned() {
        let dir = Vector3::new(0.0, -1.0, 0.0);
        let line = PalmFrame(Matrix3x5::from_columns(&[
            dir,
            dir,
            dir,
            dir,
            Vector3::zeros(),
        ]));
        let sol = procrustes_rotation(&line, &line);
        assert!(sol.ill_conditioned);
        assert!((sol.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_palm_is_reported() {
        let s = Skeleton::default_hand();
        let mut m = forward_kinematics(&s, &HandPose::neutral(Vector3::zeros())).unwrap();
        m[PALM_MCPS[2]] = m[WRIST];
        assert!(
            matches!(palm_frame(&m), Err(Error::DegeneratePalm { joint }) if joint == PALM_MCPS[2])
        );
    }

    #[test]
    fn first_frame_initialization() {
        let s = Skeleton::default_hand();
        let pred = exact_prediction(&s, &HandPose::neutral(Vector3::new(0.0, 0.0, 0.5)));
        let (init, fallback) = initialize_frame(&fresh_state(&s), &pred);
        assert!(!fallback);
        assert_eq!(init.t, FIRST_FRAME_TRANSLATION);
        assert_eq!(init.theta, Theta::zeros());
        assert!(init.r.norm() < 1e-9);
    }

    #[test]
    fn initialization_recovers_global_rotation() {
        let s = Skeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut pose = moderate_pose(&mut rng);
            pose.r = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.2..1.2),
                rng.random_range(-2.0..2.0),
            );
            let (init, _) = initialize_frame(&fresh_state(&s), &exact_prediction(&s, &pose));
            let diff = rotation::euler_to_matrix(&init.r) - rotation::euler_to_matrix(&pose.r);
            assert!(diff.norm() < 1e-9);
        }
    }

    #[test]
    fn degenerate_palm_keeps_previous_rotation() {
        let s = Skeleton::default_hand();
        let mut state = fresh_state(&s);
        let mut prev = HandPose::neutral(Vector3::new(0.0, 0.0, 0.4));
        prev.r = Vector3::new(0.1, 0.2, 0.3);
        state.prev_pose = Some(prev.clone());
        let mut pred = exact_prediction(&s, &prev);
        pred.x[PALM_MCPS[0]] = pred.x[WRIST];
        let (init, fallback) = initialize_frame(&state, &pred);
        assert!(fallback);
        assert_eq!(init, prev);
    }

    #[test]
    fn null_objective_leaves_pose_unchanged() {
        let s = Skeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pred = exact_prediction(&s, &moderate_pose(&mut rng));
        pred.omega = [0.0; JOINT_COUNT];
        let config = SolverConfig {
            weights: EnergyWeights::new(1e-4, 0.0, 0.0, 0.0).unwrap(),
            ..SolverConfig::default()
        };
        let state = fresh_state(&s);
        let (init, _) = initialize_frame(&state, &pred);
        let out = solve_frame(&s, &pred, &cam(), &config, &state).unwrap();
        assert_eq!(out.diagnostics.iterations, 0);
        assert_eq!(out.diagnostics.grad_norm, 0.0);
        assert_eq!(out.pose.to_params(), init.to_params());
    }

    #[test]
    fn energy_is_monotone_in_iterations() {
        let s = Skeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pred = exact_prediction(&s, &moderate_pose(&mut rng));
        let state = fresh_state(&s);
        for preconditioner in [Preconditioner::None, Preconditioner::GaussNewtonDiagonal] {
            let mut last = f64::INFINITY;
            for iters in 1..=30 {
                let config = SolverConfig {
                    max_iters: iters,
                    preconditioner,
                    ..SolverConfig::default()
                };
                let d = solve_frame(&s, &pred, &cam(), &config, &state)
                    .unwrap()
                    .diagnostics;
                assert!(d.final_energy <= d.initial_energy);
                assert!(d.final_energy <= last);
                last = d.final_energy;
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let s = Skeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred = exact_prediction(&s, &moderate_pose(&mut rng));
        let state = fresh_state(&s);
        let a = solve_frame(&s, &pred, &cam(), &SolverConfig::default(), &state).unwrap();
        let b = solve_frame(&s, &pred, &cam(), &SolverConfig::default(), &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_from_first_frame_start() {
        let s = Skeleton::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let pose = moderate_pose(&mut rng);
            let pred = exact_prediction(&s, &pose);
            let out = solve_frame(
                &s,
                &pred,
                &cam(),
                &SolverConfig::accuracy(),
                &fresh_state(&s),
            )
            .unwrap();
            assert!(out.pose.is_finite());
            let err = mean_joint_error(
                &forward_kinematics(&s, &out.pose).unwrap(),
                &forward_kinematics(&s, &pose).unwrap(),
            );
            assert!(err < 5e-3, "mean joint error {err}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert_eq!(SolverConfig::accuracy().max_iters, 200);
        for bad in [
            SolverConfig {
                max_iters: 0,
                ..SolverConfig::default()
            },
            SolverConfig {
                step_size: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                step_decay: 1.5,
                ..SolverConfig::default()
            },
            SolverConfig {
                grad_tol: f64::NAN,
                ..SolverConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidInput(_))));
        }
    }
}
