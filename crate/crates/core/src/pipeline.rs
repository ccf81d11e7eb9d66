//! Per-frame odometry: preprocessing, coarse registration against the local
//! map, gating against the motion prediction, adaptive fine registration, and
//! the threshold and map updates.

use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;

use crate::adaptive_threshold::{dynamic_weight, model_deviation_error, MotionWindow};
use crate::cloud::{density_filter, estimate_local_geometry, voxel_downsample, PointCloud};
use crate::coarse_reg::coarse_register;
use crate::config::EngineConfig;
use crate::error::{ConfigError, FrameError, RunError};
use crate::fine_reg::fine_register;
use crate::kitti_io::{RawScan, TrajectoryWriter};
use crate::local_map::LocalMap;
use crate::pose_gate::{predict_pose, select_initial_pose, InitSource, PoseHistory, PredictionWeights};
use crate::se3::Pose;

/// Everything carried from one frame to the next.
#[derive(Clone, Debug)]
pub struct OdometryState {
    pub history: PoseHistory,
    pub window: MotionWindow,
    pub map: LocalMap,
    pub frame_counter: usize,
}

impl OdometryState {
    pub fn new(cfg: &EngineConfig) -> Result<Self, ConfigError> {
        let window = MotionWindow::new(cfg.threshold_window, cfg.dt).map_err(|e| ConfigError::Invalid {
            key: "dt",
            reason: e.to_string(),
        })?;
        Ok(Self {
            history: PoseHistory::new(3),
            window,
            map: LocalMap::new(cfg.map_voxel, cfg.map_max_points_per_voxel, cfg.map_max_range),
            frame_counter: 0,
        })
    }
}

/// Wall time per stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub preprocess_ms: f64,
    pub coarse_ms: f64,
    pub fine_ms: f64,
    pub map_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    /// `None` for the bootstrap frame.
    pub branch: Option<InitSource>,
    /// Translation gap between prediction and coarse result.
    pub translation_diff: Option<f64>,
    pub sigma_th: f64,
    pub input_points: usize,
    pub used_points: usize,
    pub dropped_non_finite: usize,
    pub coarse_iterations: usize,
    pub fine_iterations: usize,
    pub coarse_error: Option<String>,
    pub fine_error: Option<String>,
    /// Preprocessing or map failure; the pose is the prediction.
    pub frame_error: Option<String>,
    pub timings: StageTimings,
}

impl FrameDiagnostics {
    fn new(frame: usize, input_points: usize) -> Self {
        Self {
            frame,
            branch: None,
            translation_diff: None,
            sigma_th: 0.0,
            input_points,
            used_points: 0,
            dropped_non_finite: 0,
            coarse_iterations: 0,
            fine_iterations: 0,
            coarse_error: None,
            fine_error: None,
            frame_error: None,
            timings: StageTimings::default(),
        }
    }

    /// True when fine registration or the whole frame fell back.
    pub fn failed(&self) -> bool {
        self.fine_error.is_some() || self.frame_error.is_some()
    }

    pub const CSV_HEADER: &'static str = "frame,branch,translation_diff,sigma_th,input_points,used_points,\
dropped_non_finite,coarse_iters,fine_iters,coarse_failed,fine_failed,frame_failed,\
preprocess_ms,coarse_ms,fine_ms,map_ms,total_ms";

    pub fn csv_row(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{},{:.6},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            self.frame,
            self.branch.map_or("bootstrap", |b| b.as_str()),
            self.translation_diff.map_or(String::new(), |d| format!("{d:.6}")),
            self.sigma_th,
            self.input_points,
            self.used_points,
            self.dropped_non_finite,
            self.coarse_iterations,
            self.fine_iterations,
            self.coarse_error.is_some() as u8,
            self.fine_error.is_some() as u8,
            self.frame_error.is_some() as u8,
            t.preprocess_ms,
            t.coarse_ms,
            t.fine_ms,
            t.map_ms,
            t.total_ms,
        )
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Voxel downsampling, density filtering, then covariances and normals oriented
/// toward the sensor origin.
pub fn preprocess_scan(scan: &PointCloud, cfg: &EngineConfig) -> Result<PointCloud, crate::error::CloudError> {
    let down = voxel_downsample(scan, cfg.frame_voxel)?;
    let dense = density_filter(&down, cfg.density_radius, cfg.density_alpha)?;
    estimate_local_geometry(&dense, cfg.knn, &Vector3::zeros())
}

/// The odometry engine: configuration plus sequential state.
#[derive(Clone, Debug)]
pub struct Odometry {
    cfg: EngineConfig,
    state: OdometryState,
}

impl Odometry {
    pub fn new(cfg: EngineConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let state = OdometryState::new(&cfg)?;
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OdometryState {
        &self.state
    }

    /// World pose of the next scan plus its diagnostics.
    ///
    /// Only an empty scan is an error. Registration failures fall back to the
    /// best available pose and are reported in the diagnostics.
    pub fn process_frame(&mut self, scan: &PointCloud) -> Result<(Pose, FrameDiagnostics), FrameError> {
        let frame = self.state.frame_counter;
        if scan.is_empty() {
            return Err(FrameError::EmptyScan { frame });
        }
        let start = Instant::now();
        let mut diag = FrameDiagnostics::new(frame, scan.len());
        let pose = if frame == 0 {
            self.bootstrap(scan, &mut diag)
        } else {
            self.track(scan, &mut diag)
        };
        self.state.history.push(pose);
        self.state.frame_counter += 1;
        diag.timings.total_ms = ms_since(start);
        Ok((pose, diag))
    }

    fn bootstrap(&mut self, scan: &PointCloud, diag: &mut FrameDiagnostics) -> Pose {
        let pose = Pose::identity();
        diag.sigma_th = self.cfg.threshold_bootstrap;
        let t = Instant::now();
        let frame = preprocess_scan(scan, &self.cfg);
        diag.timings.preprocess_ms = ms_since(t);
        match frame {
            Ok(frame) => {
                diag.used_points = frame.len();
                let t = Instant::now();
                self.state.map.insert_frame(&frame, &pose);
                diag.timings.map_ms = ms_since(t);
            }
            Err(e) => diag.frame_error = Some(e.to_string()),
        }
        pose
    }

    fn track(&mut self, scan: &PointCloud, diag: &mut FrameDiagnostics) -> Pose {
        let cfg = &self.cfg;
        let state = &mut self.state;
        let sigma_th = state.window.current_threshold(cfg.threshold_floor, cfg.threshold_bootstrap);
        diag.sigma_th = sigma_th;
        let pred = predict_pose(&state.history, PredictionWeights::from_threshold(sigma_th, cfg.prediction_gain));
        let prev = *state.history.latest().expect("bootstrap frame recorded");

        let t = Instant::now();
        let frame = preprocess_scan(scan, cfg);
        diag.timings.preprocess_ms = ms_since(t);
        let frame = match frame {
            Ok(f) => f,
            Err(e) => {
                diag.frame_error = Some(e.to_string());
                diag.branch = Some(InitSource::Predicted);
                return pred;
            }
        };
        diag.used_points = frame.len();
        let target = match state.map.snapshot() {
            Ok(t) => t,
            Err(e) => {
                diag.frame_error = Some(e.to_string());
                diag.branch = Some(InitSource::Predicted);
                return pred;
            }
        };

        let t = Instant::now();
        let align = match coarse_register(&frame, &target, &pred, cfg) {
            Ok(r) => {
                diag.coarse_iterations = r.iterations;
                Some(r.transform)
            }
            Err(e) => {
                diag.coarse_error = Some(e.to_string());
                None
            }
        };
        diag.timings.coarse_ms = ms_since(t);
        let gate = select_initial_pose(&pred, align.as_ref(), cfg.gate_tau);
        diag.branch = Some(gate.source);
        diag.translation_diff = gate.translation_diff;
        let init = gate.pose;

        let t = Instant::now();
        let fine = fine_register(&frame, &target, &init, sigma_th, cfg);
        diag.timings.fine_ms = ms_since(t);
        let new = match fine {
            Ok(r) => {
                diag.fine_iterations = r.iterations;
                Some(r.transform)
            }
            Err(e) => {
                diag.fine_error = Some(e.to_string());
                None
            }
        };
        let pose = new.unwrap_or(init);

        let accel_change = state.window.update_kinematics(&prev, &pose);
        if new.is_some() {
            let gamma = dynamic_weight(accel_change, cfg.dt, cfg.sigma_decay);
            let error = model_deviation_error(&init, &pose, cfg.sigma_max, cfg.beta);
            state.window.push(gamma, error);
            let t = Instant::now();
            state.map.insert_frame(&frame, &pose);
            state.map.prune(&pose.translation);
            diag.timings.map_ms = ms_since(t);
        }
        pose
    }
}

/// Streams diagnostics as CSV rows.
pub struct DiagnosticsWriter<W: Write> {
    out: W,
    header_written: bool,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            header_written: false,
        }
    }

    pub fn write(&mut self, diag: &FrameDiagnostics) -> std::io::Result<()> {
        if !self.header_written {
            writeln!(self.out, "{}", FrameDiagnostics::CSV_HEADER)?;
            self.header_written = true;
        }
        writeln!(self.out, "{}", diag.csv_row())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub mean_frame_ms: f64,
    pub max_frame_ms: f64,
    /// Frames whose pose came from a fallback.
    pub failures: usize,
    pub aligned_frames: usize,
    pub predicted_frames: usize,
}

impl From<PointCloud> for RawScan {
    fn from(cloud: PointCloud) -> Self {
        RawScan { cloud, dropped: 0 }
    }
}

/// Runs every frame in order and streams poses and diagnostics.
pub fn run_sequence<I, S, W, D>(
    frames: I,
    cfg: &EngineConfig,
    trajectory: &mut TrajectoryWriter<W>,
    mut diagnostics: Option<&mut DiagnosticsWriter<D>>,
) -> Result<RunSummary, RunError>
where
    I: IntoIterator<Item = Result<S, crate::error::DataError>>,
    S: Into<RawScan>,
    W: Write,
    D: Write,
{
    let mut odom = Odometry::new(cfg.clone())?;
    let mut summary = RunSummary {
        frames: 0,
        mean_frame_ms: 0.0,
        max_frame_ms: 0.0,
        failures: 0,
        aligned_frames: 0,
        predicted_frames: 0,
    };
    let mut total_ms = 0.0;
    for (frame, scan) in frames.into_iter().enumerate() {
        let scan: RawScan = scan.map_err(|source| RunError::Data { frame, source })?.into();
        let (pose, mut diag) = odom.process_frame(&scan.cloud)?;
        diag.dropped_non_finite = scan.dropped;
        let output = |source| RunError::Output { frame, source };
        trajectory.write(&pose).map_err(output)?;
        if let Some(d) = diagnostics.as_deref_mut() {
            d.write(&diag).map_err(output)?;
        }
        summary.frames += 1;
        summary.failures += diag.failed() as usize;
        match diag.branch {
            Some(InitSource::Aligned) => summary.aligned_frames += 1,
            Some(InitSource::Predicted) => summary.predicted_frames += 1,
            None => {}
        }
        total_ms += diag.timings.total_ms;
        summary.max_frame_ms = summary.max_frame_ms.max(diag.timings.total_ms);
    }
    if summary.frames == 0 {
        return Err(RunError::NoFrames);
    }
    summary.mean_frame_ms = total_ms / summary.frames as f64;
    let last = summary.frames - 1;
    trajectory.flush().map_err(|source| RunError::Output { frame: last, source })?;
    if let Some(d) = diagnostics {
        d.flush().map_err(|source| RunError::Output { frame: last, source })?;
    }
    Ok(summary)
}
