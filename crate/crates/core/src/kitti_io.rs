//! KITTI odometry ingestion and trajectory files.
//!
//! Velodyne scans are packed little-endian `f32` quadruples `x y z reflectance`;
//! poses are 12 row-major reals of a `3x4 [R|t]` per line.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::cloud::PointCloud;
use crate::error::DataError;
use crate::se3::Pose;

const BYTES_PER_POINT: usize = 16;

/// A decoded scan and the number of non-finite points that were skipped.
#[derive(Clone, Debug)]
pub struct RawScan {
    pub cloud: PointCloud,
    pub dropped: usize,
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<RawScan, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_scan(&bytes).ok_or_else(|| DataError::MalformedScan {
        path: path.to_path_buf(),
        len: bytes.len() as u64,
    })
}

/// `None` when the byte count is not a whole number of points.
pub fn decode_scan(bytes: &[u8]) -> Option<RawScan> {
    if bytes.len() % BYTES_PER_POINT != 0 {
        return None;
    }
    let mut points = Vec::with_capacity(bytes.len() / BYTES_PER_POINT);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(BYTES_PER_POINT) {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
        let (x, y, z) = (f(0), f(4), f(8));
        if x.is_finite() && y.is_finite() && z.is_finite() {
            points.push(Vector3::new(x as f64, y as f64, z as f64));
        } else {
            dropped += 1;
        }
    }
    Some(RawScan {
        cloud: PointCloud::new(points),
        dropped,
    })
}

/// Writes points as `f32` with zero reflectance.
pub fn write_scan(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(points.len() * BYTES_PER_POINT);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

fn parse_reals(text: &str) -> Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|tok| {
            let v: f64 = tok.parse().map_err(|_| format!("`{tok}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{tok}` is not finite"))
            }
        })
        .collect()
}

fn pose_from_row_major(v: &[f64]) -> Pose {
    let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    Pose::new(rotation, Vector3::new(v[3], v[7], v[11]))
}

/// One KITTI pose line. The rotation is re-projected onto SO(3) when needed.
pub fn parse_pose_line(line: &str) -> Result<Pose, String> {
    let v = parse_reals(line)?;
    if v.len() != 12 {
        return Err(format!("expected 12 values, found {}", v.len()));
    }
    Ok(pose_from_row_major(&v))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>, DataError> {
    let path = path.as_ref();
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            parse_pose_line(&text).map_err(|reason| DataError::MalformedPoseLine {
                path: path.to_path_buf(),
                line,
                reason,
            })
        })
        .collect()
}

/// The `Tr:` velodyne-to-camera extrinsic of a `calib.txt`.
pub fn read_calibration(path: impl AsRef<Path>) -> Result<Pose, DataError> {
    let path = path.as_ref();
    for (line, text) in read_lines(path)? {
        if let Some(rest) = text.trim_start().strip_prefix("Tr:") {
            return parse_pose_line(rest).map_err(|reason| DataError::MalformedPoseLine {
                path: path.to_path_buf(),
                line,
                reason,
            });
        }
    }
    Err(DataError::MissingCalibration(path.to_path_buf()))
}

/// Camera-frame poses expressed in the velodyne frame: `Tr^-1 * T * Tr`.
pub fn apply_calibration(poses_cam: &[Pose], tr: &Pose) -> Vec<Pose> {
    let tr_inv = tr.inverse();
    poses_cam.iter().map(|p| tr_inv.compose(p).compose(tr)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TrajectoryFormat {
    #[default]
    Kitti,
    Tum,
}

impl FromStr for TrajectoryFormat {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(Self::Kitti),
            "tum" => Ok(Self::Tum),
            _ => Err(DataError::UnsupportedFormat(s.to_string())),
        }
    }
}

impl fmt::Display for TrajectoryFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kitti => "kitti",
            Self::Tum => "tum",
        })
    }
}

/// `%.8e`-style scientific notation with a signed two-digit exponent.
fn sci(x: f64) -> String {
    let s = format!("{x:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// One line of a trajectory file, without the trailing newline.
pub fn format_pose(pose: &Pose, format: TrajectoryFormat, timestamp: f64) -> String {
    match format {
        TrajectoryFormat::Kitti => {
            let (r, t) = (&pose.rotation, &pose.translation);
            let vals = [
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            ];
            vals.iter().map(|&v| sci(v)).collect::<Vec<_>>().join(" ")
        }
        TrajectoryFormat::Tum => {
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(pose.rotation));
            let t = pose.translation;
            format!(
                "{timestamp:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                t.x, t.y, t.z, q.i, q.j, q.k, q.w
            )
        }
    }
}

/// Streams poses to a trajectory file one line at a time.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    format: TrajectoryFormat,
    dt: f64,
    count: usize,
}

impl TrajectoryWriter<BufWriter<fs::File>> {
    pub fn create(path: impl AsRef<Path>, format: TrajectoryFormat, dt: f64) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        Ok(Self::new(BufWriter::new(file), format, dt))
    }
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W, format: TrajectoryFormat, dt: f64) -> Self {
        Self {
            out,
            format,
            dt,
            count: 0,
        }
    }

    pub fn write(&mut self, pose: &Pose) -> std::io::Result<()> {
        let line = format_pose(pose, self.format, self.count as f64 * self.dt);
        self.count += 1;
        writeln!(self.out, "{line}")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// TUM timestamps are `frame_index * dt`.
pub fn write_trajectory(
    poses: &[Pose],
    path: impl AsRef<Path>,
    format: TrajectoryFormat,
    dt: f64,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = TrajectoryWriter::create(path, format, dt)?;
    for p in poses {
        w.write(p).map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<Vec<Pose>, DataError> {
    let path = path.as_ref();
    match format {
        TrajectoryFormat::Kitti => read_poses(path),
        TrajectoryFormat::Tum => read_lines(path)?
            .into_iter()
            .filter(|(_, text)| !text.trim_start().starts_with('#'))
            .map(|(line, text)| {
                let malformed = |reason: String| DataError::MalformedPoseLine {
                    path: path.to_path_buf(),
                    line,
                    reason,
                };
                let v = parse_reals(&text).map_err(malformed)?;
                if v.len() != 8 {
                    return Err(malformed(format!("expected 8 values, found {}", v.len())));
                }
                let q = Quaternion::new(v[7], v[4], v[5], v[6]);
                if q.norm() < 1e-9 {
                    return Err(malformed("zero quaternion".into()));
                }
                let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
                Ok(Pose::new(rot, Vector3::new(v[1], v[2], v[3])))
            })
            .collect(),
    }
}

/// Files of one KITTI odometry sequence.
#[derive(Clone, Debug)]
pub struct KittiSequence {
    pub scan_paths: Vec<PathBuf>,
    /// Camera-frame ground truth, when `poses/<id>.txt` exists.
    pub ground_truth: Option<Vec<Pose>>,
    /// Velodyne-to-camera extrinsic, when `calib.txt` exists.
    pub calib_tr: Option<Pose>,
}

impl KittiSequence {
    /// Reads `<dataset>/sequences/<id>/velodyne/*.bin` (sorted by name) plus the
    /// optional ground truth and calibration.
    pub fn open(dataset: impl AsRef<Path>, id: &str) -> Result<Self, DataError> {
        let dataset = dataset.as_ref();
        let seq_dir = dataset.join("sequences").join(id);
        let velo = seq_dir.join("velodyne");
        let mut scan_paths: Vec<PathBuf> = fs::read_dir(&velo)
            .map_err(|e| DataError::io(&velo, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        scan_paths.sort();
        let gt_path = dataset.join("poses").join(format!("{id}.txt"));
        let ground_truth = if gt_path.is_file() {
            Some(read_poses(&gt_path)?)
        } else {
            None
        };
        let calib_path = seq_dir.join("calib.txt");
        let calib_tr = if calib_path.is_file() {
            Some(read_calibration(&calib_path)?)
        } else {
            None
        };
        Ok(Self {
            scan_paths,
            ground_truth,
            calib_tr,
        })
    }

    pub fn len(&self) -> usize {
        self.scan_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scan_paths.is_empty()
    }

    /// Ground truth expressed in the velodyne frame.
    pub fn ground_truth_velodyne(&self) -> Option<Vec<Pose>> {
        let gt = self.ground_truth.as_ref()?;
        Some(match &self.calib_tr {
            Some(tr) => apply_calibration(gt, tr),
            None => gt.clone(),
        })
    }
}
