//! Ideal pinhole camera; the world frame is the camera frame (x right,
//! y down, z forward).

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = Error;

    fn try_from(r: RawIntrinsics) -> Result<Self> {
        Self::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !((0.0..width as f64).contains(&cx) && (0.0..height as f64).contains(&cy)) {
            return Err(Error::InvalidInput(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn image_size(&self) -> (f64, f64) {
        (self.width as f64, self.height as f64)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let (w, h) = self.image_size();
        (0.0..w).contains(&p.x) && (0.0..h).contains(&p.y)
    }

    fn check_depth(p: &Vector3<f64>) -> Result<()> {
        if p.z > MIN_DEPTH {
            Ok(())
        } else {
            Err(Error::BehindCamera { z: p.z })
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        Self::check_depth(p)?;
        Ok(self.project_unchecked(p))
    }

    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// ∂project/∂p.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        Self::check_depth(p)?;
        Ok(self.project_jacobian_unchecked(p))
    }

    pub(crate) fn project_jacobian_unchecked(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }
}
