use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::{ImagePoints, JointPositions, WRIST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PckMode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl FromStr for PckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Self::TwoD),
            "3d" => Ok(Self::ThreeD),
            other => Err(Error::InvalidInput(format!(
                "unknown PCK mode {other:?} (expected 2d or 3d)"
            ))),
        }
    }
}

/// Fraction of keypoints within each threshold (mm in 3D, px in 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl PckCurve {
    /// Value at the first threshold `>= threshold`.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| *t >= threshold)
            .map(|i| self.values[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            writeln!(out, "{t},{v}").expect("writing to a String");
        }
        out
    }
}

/// PCK over pre-computed keypoint errors. A keypoint counts as correct when
/// its error is at most the threshold. Thresholds are reported ascending.
pub fn pck_from_errors(errors: &[f64], thresholds: &[f64]) -> Result<PckCurve> {
    if thresholds
        .iter()
        .any(|t| !(t.is_finite() || *t == f64::INFINITY) || *t < 0.0)
    {
        return Err(Error::InvalidInput("PCK thresholds must be >= 0".into()));
    }
    if errors.is_empty() {
        return Err(Error::InvalidInput(
            "PCK needs at least one keypoint".into(),
        ));
    }
    let mut sorted_errors = errors.to_vec();
    sorted_errors.sort_by(f64::total_cmp);
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let n = sorted_errors.len() as f64;
    let values = thresholds
        .iter()
        .map(|t| sorted_errors.partition_point(|e| e <= t) as f64 / n)
        .collect();
    Ok(PckCurve { thresholds, values })
}

fn check_lengths(est: usize, gt: usize) -> Result<()> {
    if est != gt {
        return Err(Error::InvalidInput(format!(
            "estimated stream has {est} frames, ground truth has {gt}"
        )));
    }
    Ok(())
}

/// 3D PCK; positions in meters, thresholds in millimeters.
pub fn pck_3d(
    est: &[JointPositions],
    gt: &[JointPositions],
    thresholds_mm: &[f64],
) -> Result<PckCurve> {
    check_lengths(est.len(), gt.len())?;
    let errors: Vec<f64> = est
        .iter()
        .zip(gt)
        .flat_map(|(e, g)| e.iter().zip(g).map(|(a, b)| (a - b).norm() * 1000.0))
        .collect();
    pck_from_errors(&errors, thresholds_mm)
}

/// 2D PCK; points and thresholds in pixels.
pub fn pck_2d(est: &[ImagePoints], gt: &[ImagePoints], thresholds_px: &[f64]) -> Result<PckCurve> {
    check_lengths(est.len(), gt.len())?;
    let errors: Vec<f64> = est
        .iter()
        .zip(gt)
        .flat_map(|(e, g)| e.iter().zip(g).map(|(a, b)| (a - b).norm()))
        .collect();
    pck_from_errors(&errors, thresholds_px)
}

/// Shifts each estimated frame along z so its wrist depth equals the
/// ground-truth wrist depth; x and y are untouched.
pub fn depth_normalize(est: &[JointPositions], gt_root_z: &[f64]) -> Result<Vec<JointPositions>> {
    check_lengths(est.len(), gt_root_z.len())?;
    Ok(est
        .iter()
        .zip(gt_root_z)
        .map(|(frame, &target)| {
            let root = frame[WRIST].z;
            frame.map(|mut p| {
                p.z = target + (p.z - root);
                p
            })
        })
        .collect())
}
