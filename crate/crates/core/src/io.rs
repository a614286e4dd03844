//! File formats: JSON-Lines prediction streams and trajectories, and the
//! JSON run configuration.
//!
//! Prediction stream, one frame per line:
//!
//! ```text
//! {"t": 0.033, "u": [[px, py], ...21], "omega": [...21], "x": [[x, y, z], ...21]}
//! ```
//!
//! Joint order: wrist, then thumb, index, middle, ring, pinky, each as
//! MCP (CMC for the thumb), PIP, DIP, tip. `x` is re-normalized on load
//! (middle MCP at the origin, unit wrist distance).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::energy::{EnergyWeights, FramePrediction};
use crate::error::{Error, Result};
use crate::hand_model::{HandPose, ImagePoints, JointPositions, Skeleton, JOINT_COUNT};
use crate::sim_eval::{GroundTruthFrame, MotionScript, NoiseSpec, PckCurve};
use crate::smoothing::OneEuroParams;
use crate::solver::{Preconditioner, SolverConfig};
use crate::tracking::{BoundingBox, TimedPrediction, TrackedFrame, TrackerConfig};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "KINEFIT_CONFIG";

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    t: f64,
    u: Vec<[f64; 2]>,
    omega: Vec<f64>,
    x: Vec<[f64; 3]>,
}

fn to_points2(rows: &[[f64; 2]]) -> ImagePoints {
    std::array::from_fn(|j| Vector2::from(rows[j]))
}

fn to_points3(rows: &[[f64; 3]]) -> JointPositions {
    std::array::from_fn(|j| Vector3::from(rows[j]))
}

fn check_count(line: usize, field: &str, len: usize) -> Result<()> {
    if len != JOINT_COUNT {
        return Err(Error::Schema {
            line,
            message: format!("\"{field}\" has {len} joints, expected {JOINT_COUNT}"),
        });
    }
    Ok(())
}

fn parse_error(line: usize, e: serde_json::Error) -> Error {
    if e.is_data() {
        Error::Schema {
            line,
            message: e.to_string(),
        }
    } else {
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

/// Reads JSON-Lines records, skipping blank lines; `f` receives the
/// 1-based line number.
fn read_lines<T>(
    reader: impl BufRead,
    mut f: impl FnMut(usize, &str) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(f(i + 1, &line)?);
    }
    Ok(out)
}

pub fn parse_prediction_stream(reader: impl BufRead) -> Result<Vec<TimedPrediction>> {
    read_lines(reader, |line, text| {
        let rec: PredictionRecord = serde_json::from_str(text).map_err(|e| parse_error(line, e))?;
        check_count(line, "u", rec.u.len())?;
        check_count(line, "omega", rec.omega.len())?;
        check_count(line, "x", rec.x.len())?;
        let schema = |e: Error| Error::Schema {
            line,
            message: e.to_string(),
        };
        let omega: [f64; JOINT_COUNT] = rec.omega.try_into().expect("length checked");
        let pred = FramePrediction::new(to_points2(&rec.u), omega, to_points3(&rec.x))
            .and_then(|p| p.renormalized())
            .map_err(schema)?;
        Ok(TimedPrediction { t: rec.t, pred })
    })
}

pub fn read_prediction_stream(path: impl AsRef<Path>) -> Result<Vec<TimedPrediction>> {
    parse_prediction_stream(BufReader::new(File::open(path)?))
}

pub fn write_prediction_stream(mut writer: impl Write, stream: &[TimedPrediction]) -> Result<()> {
    for frame in stream {
        let rec = PredictionRecord {
            t: frame.t,
            u: frame.pred.u.iter().map(|p| [p.x, p.y]).collect(),
            omega: frame.pred.omega.to_vec(),
            x: frame.pred.x.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_prediction_stream(path: impl AsRef<Path>, stream: &[TimedPrediction]) -> Result<()> {
    write_prediction_stream(BufWriter::new(File::create(path)?), stream)
}

/// One line of a trajectory file, produced by tracking or by the
/// simulator's ground truth (which leaves the solver fields empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub pose: HandPose,
    pub joints_world: Vec<[f64; 3]>,
    pub joints_2d: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub degraded: bool,
}

impl TrajectoryRecord {
    pub fn joints_world(&self) -> JointPositions {
        to_points3(&self.joints_world)
    }

    pub fn joints_2d(&self) -> ImagePoints {
        to_points2(&self.joints_2d)
    }
}

impl From<&TrackedFrame> for TrajectoryRecord {
    fn from(f: &TrackedFrame) -> Self {
        Self {
            t: f.t,
            pose: f.pose.clone(),
            joints_world: f.joints_world.iter().map(|p| [p.x, p.y, p.z]).collect(),
            joints_2d: f.joints_2d.iter().map(|p| [p.x, p.y]).collect(),
            energy: f.energy,
            bbox: Some(f.bbox),
            iterations: Some(f.iterations),
            degraded: f.degraded,
        }
    }
}

impl From<&GroundTruthFrame> for TrajectoryRecord {
    fn from(f: &GroundTruthFrame) -> Self {
        Self {
            t: f.t,
            pose: f.pose.clone(),
            joints_world: f.joints_world.iter().map(|p| [p.x, p.y, p.z]).collect(),
            joints_2d: f.joints_2d.iter().map(|p| [p.x, p.y]).collect(),
            energy: None,
            bbox: None,
            iterations: None,
            degraded: false,
        }
    }
}

pub fn parse_trajectory(reader: impl BufRead) -> Result<Vec<TrajectoryRecord>> {
    read_lines(reader, |line, text| {
        let rec: TrajectoryRecord = serde_json::from_str(text).map_err(|e| parse_error(line, e))?;
        check_count(line, "joints_world", rec.joints_world.len())?;
        check_count(line, "joints_2d", rec.joints_2d.len())?;
        Ok(rec)
    })
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    parse_trajectory(BufReader::new(File::open(path)?))
}

pub fn write_trajectory<'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a TrajectoryRecord>,
) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_trajectory<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a TrajectoryRecord>,
) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Track,
    Simulate,
    Evaluate,
    Calibrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: usize,
    pub step_size: f64,
    pub step_decay: f64,
    pub grad_tol: f64,
    pub preconditioner: Preconditioner,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_iters: d.max_iters,
            step_size: d.step_size,
            step_decay: d.step_decay,
            grad_tol: d.grad_tol,
            preconditioner: d.preconditioner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(flatten)]
    pub params: OneEuroParams,
    #[serde(default = "yes")]
    pub filter_2d: bool,
    #[serde(default = "yes")]
    pub filter_3d: bool,
}

fn yes() -> bool {
    true
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            params: OneEuroParams::default(),
            filter_2d: true,
            filter_3d: true,
        }
    }
}

fn default_fps() -> f64 {
    30.0
}

/// Run configuration. Only `intrinsics` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Skeleton file; relative paths resolve against the config file. The
    /// bundled default hand is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub weights: EnergyWeights,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Frame rate of simulated streams.
    #[serde(default = "default_fps")]
    pub fps: f64,
}

impl RunConfig {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            skeleton: None,
            intrinsics,
            solver: SolverSection::default(),
            weights: EnergyWeights::default(),
            filter: FilterSection::default(),
            mode: None,
            fps: default_fps(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| parse_error(e.line(), e))?;
        config.solver_config().validate()?;
        if !(config.fps > 0.0 && config.fps.is_finite()) {
            return Err(Error::InvalidInput("fps must be > 0".into()));
        }
        Ok(config)
    }

    /// Loads a config file and resolves (and checks) the skeleton path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(skeleton) = &config.skeleton {
            let resolved = if skeleton.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(skeleton)
            } else {
                skeleton.clone()
            };
            if !resolved.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("skeleton file {} not found", resolved.display()),
                )));
            }
            config.skeleton = Some(resolved);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton {
            Some(path) => load_skeleton(path),
            None => Ok(Skeleton::default_hand()),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.solver.max_iters,
            step_size: self.solver.step_size,
            step_decay: self.solver.step_decay,
            grad_tol: self.solver.grad_tol,
            weights: self.weights,
            preconditioner: self.solver.preconditioner,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            solver: self.solver_config(),
            filter: self.filter.params,
            filter_2d: self.filter.filter_2d,
            filter_3d: self.filter.filter_3d,
        }
    }
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    Skeleton::from_json(&std::fs::read_to_string(path)?)
}

pub fn save_skeleton(path: impl AsRef<Path>, skeleton: &Skeleton) -> Result<()> {
    let mut text = skeleton.to_json();
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(e.line(), e))
}

pub fn load_motion_script(path: impl AsRef<Path>) -> Result<MotionScript> {
    load_json(path.as_ref())
}

pub fn save_motion_script(path: impl AsRef<Path>, script: &MotionScript) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(script)? + "\n")?;
    Ok(())
}

pub fn load_noise_spec(path: impl AsRef<Path>) -> Result<NoiseSpec> {
    load_json(path.as_ref())
}

pub fn save_noise_spec(path: impl AsRef<Path>, noise: &NoiseSpec) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(noise)? + "\n")?;
    Ok(())
}

pub fn save_pck_csv(path: impl AsRef<Path>, curve: &PckCurve) -> Result<()> {
    std::fs::write(path, curve.to_csv())?;
    Ok(())
}
