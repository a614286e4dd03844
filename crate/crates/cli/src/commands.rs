use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use kinefit_core::hand_model::{calibrate_bone_lengths, WRIST};
use kinefit_core::io::{self, Mode, RunConfig, TrajectoryRecord, CONFIG_ENV};
use kinefit_core::sim_eval::{
    canned_scripts, depth_normalize, pck_2d, pck_3d, synthesize_predictions, MotionScript,
    NoiseSpec, PckMode,
};
use kinefit_core::tracking::Tracker;
use kinefit_core::{Error, Skeleton};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PARSE: u8 = 4;
pub const EXIT_INVALID: u8 = 5;
pub const EXIT_NUMERICAL: u8 = 6;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Parse { .. } | Error::Schema { .. } | Error::Json(_) => EXIT_PARSE,
        Error::InvalidInput(_)
        | Error::InsufficientData { .. }
        | Error::InvalidTimestamp { .. }
        | Error::ScriptInvalid { .. }
        | Error::DegenerateInput(_)
        | Error::DegeneratePrediction { .. }
        | Error::DegeneratePalm { .. } => EXIT_INVALID,
        Error::SolverDiverged { .. } | Error::BehindCamera { .. } => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

/// Model-based 3D hand-pose fitting from 2D and root-relative 3D joint
/// predictions.
#[derive(Debug, Parser)]
#[command(name = "kinefit", version)]
pub struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match self.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run configuration (JSON).
    #[arg(long, env = CONFIG_ENV)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the hand model to every frame of a prediction stream.
    Track {
        #[command(flatten)]
        config: ConfigArg,
        /// Prediction stream (JSON Lines).
        #[arg(long)]
        predictions: PathBuf,
        /// Output trajectory (JSON Lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a prediction stream and its ground truth from a motion script.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Motion script file, or one of the built-in names (wave, curl, rotation_sweep).
        #[arg(long)]
        script: String,
        /// Noise parameters (JSON). Noise-free when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Output prediction stream.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth trajectory; defaults to `<out stem>.gt.jsonl`.
        #[arg(long)]
        gt_out: Option<PathBuf>,
        /// Frame rate; overrides the config.
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Compute a PCK curve of an estimated trajectory against ground truth.
    Evaluate {
        /// Estimated trajectory.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth trajectory.
        #[arg(long)]
        gt: PathBuf,
        /// `3d` (world joints, mm) or `2d` (image joints, px).
        #[arg(long, default_value = "3d")]
        mode: PckMode,
        /// Output CSV with columns threshold,fraction.
        #[arg(long)]
        out: PathBuf,
        /// Thresholds (mm for 3d, px for 2d). Defaults: 5..100 mm or 2..40 px.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Align each estimated wrist depth to the ground truth first (3d only).
        #[arg(long)]
        depth_normalize: bool,
    },
    /// Adapt skeleton bone lengths to the 2D detections of a prediction stream.
    Calibrate {
        #[arg(long)]
        predictions: PathBuf,
        /// Template skeleton; the bundled default hand when omitted.
        #[arg(long)]
        skeleton_in: Option<PathBuf>,
        #[arg(long)]
        skeleton_out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Track {
            config,
            predictions,
            out,
        } => track(&config.config, &predictions, &out),
        Command::Simulate {
            config,
            script,
            noise,
            out,
            gt_out,
            fps,
        } => simulate(&config.config, &script, noise.as_deref(), &out, gt_out, fps),
        Command::Evaluate {
            est,
            gt,
            mode,
            out,
            thresholds,
            depth_normalize,
        } => evaluate(&est, &gt, mode, &out, thresholds, depth_normalize),
        Command::Calibrate {
            predictions,
            skeleton_in,
            skeleton_out,
        } => calibrate(&predictions, skeleton_in.as_deref(), &skeleton_out),
    }
}

fn load_config(path: &Path, expected: Mode) -> Result<RunConfig, Error> {
    let config = RunConfig::load(path)?;
    if let Some(mode) = config.mode.filter(|m| *m != expected) {
        warn!("config mode {mode:?} ignored by the {expected:?} command");
    }
    Ok(config)
}

fn track(config: &Path, predictions: &Path, out: &Path) -> Result<(), Error> {
    let config = load_config(config, Mode::Track)?;
    let stream = io::read_prediction_stream(predictions)?;
    let mut tracker = Tracker::new(
        config.skeleton()?,
        config.intrinsics,
        config.tracker_config(),
    )?;
    let mut records = Vec::with_capacity(stream.len());
    for frame in &stream {
        records.push(TrajectoryRecord::from(&tracker.step(frame.t, &frame.pred)?));
    }
    let degraded = records.iter().filter(|r| r.degraded).count();
    info!("tracked {} frames ({degraded} degraded)", records.len());
    io::save_trajectory(out, &records)
}

fn load_script(spec: &str) -> Result<MotionScript, Error> {
    let path = Path::new(spec);
    if path.exists() {
        return io::load_motion_script(path);
    }
    canned_scripts()
        .into_iter()
        .find(|s| s.name == spec)
        .ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("motion script {spec} is neither a file nor a built-in script"),
            ))
        })
}

fn default_gt_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.gt.jsonl"))
}

fn simulate(
    config: &Path,
    script: &str,
    noise: Option<&Path>,
    out: &Path,
    gt_out: Option<PathBuf>,
    fps: Option<f64>,
) -> Result<(), Error> {
    let config = load_config(config, Mode::Simulate)?;
    let script = load_script(script)?;
    let noise = match noise {
        Some(path) => io::load_noise_spec(path)?,
        None => NoiseSpec::default(),
    };
    let synthesis = synthesize_predictions(
        &config.skeleton()?,
        &config.intrinsics,
        &script,
        &noise,
        fps.unwrap_or(config.fps),
    )?;
    let gt_out = gt_out.unwrap_or_else(|| default_gt_path(out));
    io::save_prediction_stream(out, &synthesis.predictions)?;
    let gt: Vec<TrajectoryRecord> = synthesis
        .ground_truth
        .iter()
        .map(TrajectoryRecord::from)
        .collect();
    io::save_trajectory(&gt_out, &gt)?;
    info!(
        "wrote {} frames to {} and {}",
        gt.len(),
        out.display(),
        gt_out.display()
    );
    Ok(())
}

fn default_thresholds(mode: PckMode) -> Vec<f64> {
    match mode {
        PckMode::ThreeD => (1..=20).map(|k| 5.0 * k as f64).collect(),
        PckMode::TwoD => (1..=20).map(|k| 2.0 * k as f64).collect(),
    }
}

fn evaluate(
    est: &Path,
    gt: &Path,
    mode: PckMode,
    out: &Path,
    thresholds: Option<Vec<f64>>,
    normalize: bool,
) -> Result<(), Error> {
    let est = io::read_trajectory(est)?;
    let gt = io::read_trajectory(gt)?;
    let thresholds = thresholds.unwrap_or_else(|| default_thresholds(mode));
    let curve = match mode {
        PckMode::ThreeD => {
            let gt_joints: Vec<_> = gt.iter().map(TrajectoryRecord::joints_world).collect();
            let mut est_joints: Vec<_> = est.iter().map(TrajectoryRecord::joints_world).collect();
            if normalize {
                let roots: Vec<f64> = gt_joints.iter().map(|j| j[WRIST].z).collect();
                est_joints = depth_normalize(&est_joints, &roots)?;
            }
            pck_3d(&est_joints, &gt_joints, &thresholds)?
        }
        PckMode::TwoD => {
            if normalize {
                return Err(Error::InvalidInput(
                    "--depth-normalize applies to 3d mode only".into(),
                ));
            }
            let est_points: Vec<_> = est.iter().map(TrajectoryRecord::joints_2d).collect();
            let gt_points: Vec<_> = gt.iter().map(TrajectoryRecord::joints_2d).collect();
            pck_2d(&est_points, &gt_points, &thresholds)?
        }
    };
    io::save_pck_csv(out, &curve)
}

fn calibrate(
    predictions: &Path,
    skeleton_in: Option<&Path>,
    skeleton_out: &Path,
) -> Result<(), Error> {
    let template = match skeleton_in {
        Some(path) => io::load_skeleton(path)?,
        None => Skeleton::default_hand(),
    };
    let frames: Vec<_> = io::read_prediction_stream(predictions)?
        .into_iter()
        .map(|f| f.pred.u)
        .collect();
    let calibrated = calibrate_bone_lengths(&frames, &template)?;
    io::save_skeleton(skeleton_out, &calibrated)
}
