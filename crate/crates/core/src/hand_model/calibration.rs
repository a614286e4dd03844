use super::{ImagePoints, Skeleton, JOINT_COUNT, MIDDLE_MCP};
use crate::error::{Error, Result};

pub const CALIBRATION_MIN_FRAMES: usize = 30;

/// Per-user bone length adaptation from 2D detections of a hand held
/// parallel to the image plane.
///
/// Every bone's image length is divided by the wrist→middle-MCP image length
/// in the same frame; these relative lengths are averaged over all frames and
/// rescaled by the template's wrist→middle-MCP length, which is therefore
/// kept. Assumes square pixels.
pub fn calibrate_bone_lengths(frames: &[ImagePoints], template: &Skeleton) -> Result<Skeleton> {
    if frames.len() < CALIBRATION_MIN_FRAMES {
        return Err(Error::InsufficientData {
            needed: CALIBRATION_MIN_FRAMES,
            got: frames.len(),
        });
    }
    let mut sums = [0.0; JOINT_COUNT];
    for (f, points) in frames.iter().enumerate() {
        let lengths: [f64; JOINT_COUNT] = std::array::from_fn(|j| {
            template
                .parent(j)
                .map_or(0.0, |p| (points[j] - points[p]).norm())
        });
        for (j, len) in lengths.iter().enumerate().skip(1) {
            if !len.is_finite() || *len <= f64::EPSILON {
                return Err(Error::DegenerateInput(format!(
                    "frame {f}: measured bone ending at joint {j} ({}) has zero length",
                    template.joint(j).name
                )));
            }
        }
        let anchor = lengths[MIDDLE_MCP];
        for j in 1..JOINT_COUNT {
            sums[j] += lengths[j] / anchor;
        }
    }
    let n = frames.len() as f64;
    let anchor_length = template.bone_length(MIDDLE_MCP);
    let lengths = sums.map(|s| s / n * anchor_length);
    template.with_bone_lengths(&lengths)
}
