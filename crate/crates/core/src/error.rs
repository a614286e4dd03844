use thiserror::Error;

use crate::hand_model::HandPose;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} frames, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate prediction: zero-length bone ending at joint {joint} ({name})")]
    DegeneratePrediction { joint: usize, name: String },

    #[error("degenerate palm: joint {joint} coincides with the wrist")]
    DegeneratePalm { joint: usize },

    #[error("point at depth {z} m is behind the camera")]
    BehindCamera { z: f64 },

    #[error("solver diverged after {iterations} iterations")]
    SolverDiverged {
        iterations: usize,
        last_finite: Box<HandPose>,
    },

    #[error("timestamp {got} s does not advance past {previous} s")]
    InvalidTimestamp { previous: f64, got: f64 },

    #[error("motion script invalid at frame {frame}: {reason}")]
    ScriptInvalid { frame: usize, reason: String },

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
