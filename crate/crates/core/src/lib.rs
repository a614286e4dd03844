//! Model-based 3D hand pose fitting.
//!
//! A 21-joint kinematic hand skeleton is fitted, frame by frame, to 2D
//! keypoint detections and root-relative 3D joint predictions by minimizing
//! a four-term energy (2D reprojection, 3D articulation, joint limits and
//! temporal smoothness). The crate also ships a seeded prediction simulator
//! and PCK evaluation so the whole tracker can be exercised without a
//! learned detector.
//!
//! Joint order used throughout: wrist, then thumb, index, middle, ring and
//! pinky, each as MCP (CMC for the thumb), PIP, DIP, tip.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod energy;
mod error;
pub mod hand_model;
pub mod io;
pub mod sim_eval;
pub mod smoothing;
pub mod solver;
pub mod tracking;

pub use camera::CameraIntrinsics;
pub use energy::{EnergyWeights, FramePrediction, RelativeTargets, TermValue};
pub use error::{Error, Result};
pub use hand_model::{
    HandPose, ImagePoints, JointPositions, Params, Skeleton, JOINT_COUNT, PARAM_COUNT, THETA_COUNT,
};
pub use smoothing::{OneEuroFilter, OneEuroParams};
pub use solver::{PalmFrame, SolveDiagnostics, SolverConfig};
pub use tracking::{BoundingBox, TrackedFrame, Tracker, TrackerConfig, TrackerState};
