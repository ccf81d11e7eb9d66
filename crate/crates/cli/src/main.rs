use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lidar_odom::error::{ConfigError, DataError, EvalError, RunError};
use lidar_odom::evaluation::compute_ape;
use lidar_odom::kitti_io::{read_scan, read_trajectory, KittiSequence, TrajectoryFormat, TrajectoryWriter};
use lidar_odom::pipeline::{run_sequence, DiagnosticsWriter};
use lidar_odom::{EngineConfig, Pose};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "odom", version, about = "LiDAR odometry on KITTI-format sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Kitti,
    Tum,
}

impl From<Format> for TrajectoryFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Kitti => TrajectoryFormat::Kitti,
            Format::Tum => TrajectoryFormat::Tum,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Plane {
    Xy,
    Xz,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the trajectory of a sequence.
    Run(RunArgs),
    /// Absolute pose error of an estimate against ground truth.
    Eval(EvalArgs),
    /// Top-down SVG plot of one or two trajectories.
    Plot(PlotArgs),
    /// Print the effective configuration.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root containing `sequences/<id>/velodyne`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    sequence: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kitti")]
    format: Format,
    /// Process at most this many scans.
    #[arg(long)]
    max_frames: Option<usize>,
    /// Coarse correspondence weight decay, overriding the config value.
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Rigidly align the estimate first (the config default when neither flag is given).
    #[arg(long, conflicts_with = "no_align")]
    align: bool,
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kitti")]
    format: Format,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kitti")]
    format: Format,
    /// Horizontal plane: `xy` for LiDAR frames, `xz` for camera frames.
    #[arg(long, value_enum, default_value = "xy")]
    plane: Plane,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::new(EXIT_DATA, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_USAGE, format!("config: {e}"))
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::new(EXIT_DATA, e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Data { .. } | RunError::NoFrames => EXIT_DATA,
            RunError::Config(_) => EXIT_USAGE,
            RunError::Frame(_) | RunError::Output { .. } => EXIT_RUNTIME,
        };
        Failure::new(code, e)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_RUNTIME, format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", p.display())))?;
            Ok(EngineConfig::from_toml_str(&text)?)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(sigma) = args.weight_decay {
        cfg.coarse_sigma = sigma;
        cfg.validate()?;
    }
    let seq = KittiSequence::open(&args.dataset, &args.sequence)?;
    if seq.is_empty() {
        return Err(Failure::new(EXIT_DATA, format!("sequence {} has no scans", args.sequence)));
    }
    let limit = args.max_frames.unwrap_or(usize::MAX);
    let mut traj = TrajectoryWriter::new(create(&args.output)?, args.format.into(), cfg.dt);
    let mut diag = match &args.diagnostics {
        Some(p) => Some(DiagnosticsWriter::new(create(p)?)),
        None => None,
    };
    let frames = seq.scan_paths.iter().take(limit).map(read_scan);
    let summary = run_sequence(frames, &cfg, &mut traj, diag.as_mut())?;
    eprintln!(
        "{} frames, mean {:.1} ms, max {:.1} ms, {} fallbacks, {} aligned / {} predicted",
        summary.frames,
        summary.mean_frame_ms,
        summary.max_frame_ms,
        summary.failures,
        summary.aligned_frames,
        summary.predicted_frames
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let align = if args.align {
        true
    } else if args.no_align {
        false
    } else {
        cfg.eval_align
    };
    let format = args.format.into();
    let estimate = read_trajectory(&args.estimate, format)?;
    let reference = read_trajectory(&args.ground_truth, format)?;
    let report = compute_ape(&estimate, &reference, align)?;
    let mut out = create(&args.report)?;
    report.write_csv(&mut out).map_err(|e| io_failure(&args.report, e))?;
    println!("rmse {:.6} m, mean {:.6} m, std {:.6} m", report.rmse, report.mean, report.std);
    Ok(())
}

fn svg_plot(trajectories: &[(&[Pose], &str)], plane: Plane) -> String {
    let project = |p: &Pose| match plane {
        Plane::Xy => (p.translation.x, -p.translation.y),
        Plane::Xz => (p.translation.x, -p.translation.z),
    };
    let all: Vec<(f64, f64)> = trajectories.iter().flat_map(|(t, _)| t.iter().map(project)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &all {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if all.is_empty() {
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1.0);
    let (w, h) = (x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
    let stroke = w.max(h) / 400.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.3} {:.3} {w:.3} {h:.3}\" width=\"800\" height=\"{:.0}\">\n",
        x0 - pad,
        y0 - pad,
        800.0 * h / w
    );
    for (traj, color) in trajectories {
        let pts: Vec<String> = traj
            .iter()
            .map(|p| {
                let (x, y) = project(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{stroke:.4}\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn plot(args: PlotArgs) -> Result<(), Failure> {
    let format = args.format.into();
    let estimate = read_trajectory(&args.estimate, format)?;
    let reference = match &args.ground_truth {
        Some(p) => Some(read_trajectory(p, format)?),
        None => None,
    };
    let mut layers: Vec<(&[Pose], &str)> = Vec::new();
    if let Some(r) = &reference {
        layers.push((r, "#888888"));
    }
    layers.push((&estimate, "#d62728"));
    fs::write(&args.out, svg_plot(&layers, args.plane)).map_err(|e| io_failure(&args.out, e))
}

fn print_config(path: Option<PathBuf>) -> Result<(), Failure> {
    print!("{}", load_config(path.as_deref())?.to_toml_string());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
        Command::PrintConfig { config } => print_config(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
