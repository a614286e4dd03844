//! Frame loop: bounding-box tracking, prediction filtering, per-frame
//! solve and state carry-over.

use log::warn;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::energy::FramePrediction;
use crate::error::{Error, Result};
use crate::hand_model::{
    forward_kinematics, HandPose, ImagePoints, JointPositions, Params, Skeleton, JOINT_COUNT,
};
use crate::smoothing::{OneEuroFilter, OneEuroParams};
use crate::solver::{
    model_palm_frame, solve_frame, PalmFrame, SolverConfig, FIRST_FRAME_TRANSLATION,
};

/// Box side relative to the extent of the previous detections.
pub const BBOX_PADDING: f64 = 2.2;
/// Smallest box side, pixels.
pub const BBOX_MIN_SIDE: f64 = 32.0;

/// Square image region, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    #[serde(with = "vec2_array")]
    pub center: Vector2<f64>,
    pub side: f64,
}

impl BoundingBox {
    /// Centered square with side equal to the image height.
    pub fn initial(width: f64, height: f64) -> Self {
        Self {
            center: Vector2::new(width / 2.0, height / 2.0),
            side: height,
        }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let h = self.side / 2.0;
        (p - self.center).iter().all(|d| d.abs() <= h)
    }

    pub fn intersects_image(&self, width: f64, height: f64) -> bool {
        let h = self.side / 2.0;
        self.center.x + h > 0.0
            && self.center.x - h < width
            && self.center.y + h > 0.0
            && self.center.y - h < height
    }
}

mod vec2_array {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector2<f64>, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Vector2::new(x, y))
    }
}

/// Square box around the previous frame's detections: centered on their
/// centroid, side `BBOX_PADDING` times their larger extent (at least
/// `BBOX_MIN_SIDE`), shifted to lie inside the image where possible.
/// Without usable detections (first frame, or none inside the image) the
/// initial box is returned.
pub fn update_bbox(detections: Option<&[Vector2<f64>]>, width: f64, height: f64) -> BoundingBox {
    let initial = BoundingBox::initial(width, height);
    let Some(points) = detections.filter(|d| !d.is_empty()) else {
        return initial;
    };
    let inside = |p: &&Vector2<f64>| (0.0..width).contains(&p.x) && (0.0..height).contains(&p.y);
    if !points.iter().any(|p| inside(&p)) {
        return initial;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    let side = (BBOX_PADDING * extent)
        .max(BBOX_MIN_SIDE)
        .min(width.max(height));
    let clamp_axis = |c: f64, limit: f64| {
        if side <= limit {
            c.clamp(side / 2.0, limit - side / 2.0)
        } else {
            limit / 2.0
        }
    };
    BoundingBox {
        center: Vector2::new(
            clamp_axis(centroid.x, width),
            clamp_axis(centroid.y, height),
        ),
        side,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub solver: SolverConfig,
    pub filter: OneEuroParams,
    /// Filter the 2D detections.
    pub filter_2d: bool,
    /// Filter the root-relative 3D predictions.
    pub filter_3d: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            filter: OneEuroParams::default(),
            filter_2d: true,
            filter_3d: true,
        }
    }
}

impl TrackerConfig {
    pub fn unfiltered(solver: SolverConfig) -> Self {
        Self {
            solver,
            filter_2d: false,
            filter_3d: false,
            ..Self::default()
        }
    }
}

/// Prediction with its capture time in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPrediction {
    pub t: f64,
    pub pred: FramePrediction,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub prev_pose: Option<HandPose>,
    /// Backward difference of the last two solutions; zero after the first frame.
    pub prev_velocity: Params,
    pub bbox: BoundingBox,
    /// Model palm frame at identity rotation.
    pub zbar: PalmFrame,
    pub filter_2d: OneEuroFilter,
    pub filter_3d: OneEuroFilter,
    pub frame_index: usize,
    /// Confident detections of the previous frame.
    pub prev_detections: Option<Vec<Vector2<f64>>>,
}

impl TrackerState {
    pub fn new(skeleton: &Skeleton, cam: &CameraIntrinsics, filter: OneEuroParams) -> Self {
        let (w, h) = cam.image_size();
        Self {
            prev_pose: None,
            prev_velocity: Params::zeros(),
            bbox: BoundingBox::initial(w, h),
            zbar: model_palm_frame(skeleton),
            filter_2d: OneEuroFilter::new(filter),
            filter_3d: OneEuroFilter::new(filter),
            frame_index: 0,
            prev_detections: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub t: f64,
    pub pose: HandPose,
    pub joints_world: JointPositions,
    pub joints_2d: ImagePoints,
    /// Final energy; `None` for degraded frames.
    pub energy: Option<f64>,
    pub bbox: BoundingBox,
    pub iterations: usize,
    /// The solve failed and the previous pose was reused.
    pub degraded: bool,
}

/// Stateful single-hand tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    skeleton: Skeleton,
    cam: CameraIntrinsics,
    config: TrackerConfig,
    state: TrackerState,
}

impl Tracker {
    pub fn new(skeleton: Skeleton, cam: CameraIntrinsics, config: TrackerConfig) -> Result<Self> {
        config.solver.validate()?;
        let state = TrackerState::new(&skeleton, &cam, config.filter);
        Ok(Self {
            skeleton,
            cam,
            config,
            state,
        })
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    fn filtered(&mut self, t: f64, pred: &FramePrediction) -> Result<FramePrediction> {
        let mut out = pred.clone();
        if self.config.filter_2d {
            let flat: Vec<f64> = pred.u.iter().flat_map(|p| [p.x, p.y]).collect();
            let f = self.state.filter_2d.step(&flat, t)?;
            out.u = std::array::from_fn(|j| Vector2::new(f[2 * j], f[2 * j + 1]));
        }
        if self.config.filter_3d {
            let flat: Vec<f64> = pred.x.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
            let f = self.state.filter_3d.step(&flat, t)?;
            out.x = std::array::from_fn(|j| Vector3::new(f[3 * j], f[3 * j + 1], f[3 * j + 2]));
        }
        Ok(out)
    }

    /// Processes one frame. Solver failures yield a degraded frame that
    /// repeats the previous pose; malformed input is an error.
    pub fn step(&mut self, t: f64, pred: &FramePrediction) -> Result<TrackedFrame> {
        let (w, h) = self.cam.image_size();
        let bbox = update_bbox(self.state.prev_detections.as_deref(), w, h);
        self.state.bbox = bbox;

        let filtered = self.filtered(t, pred)?;
        let solved = filtered.renormalized().and_then(|p| {
            solve_frame(
                &self.skeleton,
                &p,
                &self.cam,
                &self.config.solver,
                &self.state,
            )
        });
        let (pose, energy, iterations, degraded) = match solved {
            Ok(outcome) => (
                outcome.pose,
                Some(outcome.diagnostics.final_energy),
                outcome.diagnostics.iterations,
                false,
            ),
            Err(
                e @ (Error::SolverDiverged { .. }
                | Error::DegeneratePrediction { .. }
                | Error::DegenerateInput(_)
                | Error::DegeneratePalm { .. }),
            ) => {
                warn!(
                    "frame {}: {e}; reusing previous pose",
                    self.state.frame_index
                );
                let pose = self
                    .state
                    .prev_pose
                    .clone()
                    .unwrap_or_else(|| HandPose::neutral(FIRST_FRAME_TRANSLATION));
                (pose, None, 0, true)
            }
            Err(e) => return Err(e),
        };

        self.state.prev_velocity = match &self.state.prev_pose {
            Some(prev) => pose.velocity_from(prev),
            None => Params::zeros(),
        };
        self.state.prev_pose = Some(pose.clone());
        self.state.prev_detections = Some(
            (0..JOINT_COUNT)
                .filter(|&j| pred.omega[j] > 0.0)
                .map(|j| pred.u[j])
                .collect(),
        );
        self.state.frame_index += 1;

        let joints_world = forward_kinematics(&self.skeleton, &pose)?;
        let joints_2d = joints_world.map(|p| self.cam.project_unchecked(&p));
        Ok(TrackedFrame {
            t,
            pose,
            joints_world,
            joints_2d,
            energy,
            bbox,
            iterations,
            degraded,
        })
    }
}

/// Tracks a whole prediction stream with a fresh tracker.
pub fn track_sequence(
    skeleton: &Skeleton,
    cam: &CameraIntrinsics,
    config: &TrackerConfig,
    stream: &[TimedPrediction],
) -> Result<Vec<TrackedFrame>> {
    let mut tracker = Tracker::new(skeleton.clone(), *cam, *config)?;
    stream.iter().map(|f| tracker.step(f.t, &f.pred)).collect()
}
