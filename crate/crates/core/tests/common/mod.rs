//! Synthetic scenes with known ground truth.
#![allow(dead_code)]

use lidar_odom::cloud::{estimate_local_geometry, IndexedCloud, PointCloud};
use lidar_odom::se3::{Pose, Twist};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn jitter(rng: &mut ChaCha8Rng, p: Vector3<f64>, noise: f64) -> Vector3<f64> {
    if noise == 0.0 {
        return p;
    }
    let n = Normal::new(0.0, noise).unwrap();
    p + Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Floor `z = 0` and walls `x = 0`, `y = 0`, each `size` on a side, `n / 3` points apiece.
pub fn three_plane_scene(rng: &mut ChaCha8Rng, n: usize, size: f64, noise: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| {
            let (a, b) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
            let p = match i % 3 {
                0 => Vector3::new(a, b, 0.0),
                1 => Vector3::new(0.0, a, b),
                _ => Vector3::new(a, 0.0, b),
            };
            jitter(rng, p, noise)
        })
        .collect()
}

/// Uniform points in a ball.
pub fn ball_outliers(rng: &mut ChaCha8Rng, n: usize, center: Vector3<f64>, radius: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            out.push(center + v * radius);
        }
    }
    out
}

/// Covariances and normals with `k` neighbors, normals facing `viewpoint`.
pub fn with_geometry(points: Vec<Vector3<f64>>, k: usize, viewpoint: Vector3<f64>) -> PointCloud {
    estimate_local_geometry(&PointCloud::new(points), k, &viewpoint).unwrap()
}

pub fn indexed(cloud: PointCloud) -> IndexedCloud {
    IndexedCloud::new(cloud).unwrap()
}

pub fn random_perturbation(rng: &mut ChaCha8Rng, max_deg: f64, max_m: f64) -> Pose {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let dir = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let angle = rng.random_range(0.0..max_deg).to_radians();
    let dist = rng.random_range(0.0..max_m);
    Twist::new(axis * angle, Vector3::zeros()).exp().compose(&Pose::from_translation(dir * dist))
}

/// Rotation (degrees) and translation (meters) between two poses.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let d = a.inverse().compose(b);
    (d.angle().to_degrees(), d.translation.norm())
}

/// An axis-aligned box given by its min and max corners.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

/// A straight corridor along `x` with a floor, a ceiling, two side walls and
/// irregularly placed pillars that make motion along the axis observable.
#[derive(Clone, Debug)]
pub struct Corridor {
    pub half_width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub blocks: Vec<Block>,
}

impl Corridor {
    pub fn standard() -> Self {
        let mut blocks = Vec::new();
        let pillars = [
            (-6.3, 1.0, 0.7),
            (-3.1, -1.0, 0.9),
            (1.4, 1.0, 0.6),
            (3.7, -1.0, 0.8),
            (5.2, 1.0, 1.1),
            (8.9, -1.0, 0.6),
            (10.6, 1.0, 0.9),
            (13.8, -1.0, 0.7),
            (15.1, 1.0, 0.8),
            (18.4, -1.0, 1.0),
            (21.0, 1.0, 0.6),
            (23.9, -1.0, 0.9),
        ];
        let (hw, h) = (2.5, 3.0);
        for (x, side, w) in pillars {
            let depth = 0.6;
            let (y0, y1) = if side > 0.0 { (hw - depth, hw) } else { (-hw, -hw + depth) };
            blocks.push(Block {
                min: Vector3::new(x, y0, 0.0),
                max: Vector3::new(x + w, y1, h),
            });
        }
        // low crates on the floor
        for (x, y, s, t) in [(-1.0, 0.3, 0.8, 0.9), (7.3, -0.6, 0.6, 0.5), (16.5, 0.5, 0.9, 1.2), (26.0, -0.2, 0.7, 0.7)] {
            blocks.push(Block {
                min: Vector3::new(x, y, 0.0),
                max: Vector3::new(x + s, y + s, t),
            });
        }
        Self {
            half_width: hw,
            height: h,
            x_range: (-15.0, 35.0),
            blocks,
        }
    }

    fn inside_block(&self, p: &Vector3<f64>) -> bool {
        self.blocks.iter().any(|b| {
            (0..3).all(|k| p[k] > b.min[k] + 1e-9 && p[k] < b.max[k] - 1e-9)
        })
    }

    /// Points sampled at `density` per square meter on every visible surface
    /// within `range` of `sensor`.
    pub fn sample_around(&self, rng: &mut ChaCha8Rng, sensor: &Vector3<f64>, range: f64, density: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        let (x0, x1) = (
            (sensor.x - range).max(self.x_range.0),
            (sensor.x + range).min(self.x_range.1),
        );
        let (hw, h) = (self.half_width, self.height);
        let mut rect = |pts: &mut Vec<Vector3<f64>>, origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>| {
            let area = u.cross(&v).norm();
            let count = (area * density).round() as usize;
            for _ in 0..count {
                let p = origin + u * rng.random_range(0.0..1.0) + v * rng.random_range(0.0..1.0);
                if (p - sensor).norm() <= range && !self.inside_block(&p) {
                    pts.push(p);
                }
            }
        };
        let len = x1 - x0;
        rect(&mut pts, Vector3::new(x0, -hw, 0.0), Vector3::new(len, 0.0, 0.0), Vector3::new(0.0, 2.0 * hw, 0.0));
        rect(&mut pts, Vector3::new(x0, -hw, h), Vector3::new(len, 0.0, 0.0), Vector3::new(0.0, 2.0 * hw, 0.0));
        rect(&mut pts, Vector3::new(x0, -hw, 0.0), Vector3::new(len, 0.0, 0.0), Vector3::new(0.0, 0.0, h));
        rect(&mut pts, Vector3::new(x0, hw, 0.0), Vector3::new(len, 0.0, 0.0), Vector3::new(0.0, 0.0, h));
        for b in &self.blocks {
            if b.max.x < x0 || b.min.x > x1 {
                continue;
            }
            let d = b.max - b.min;
            let (ex, ey, ez) = (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, d.y, 0.0), Vector3::new(0.0, 0.0, d.z));
            rect(&mut pts, b.min, ey, ez);
            rect(&mut pts, b.min + ex, ey, ez);
            rect(&mut pts, b.min, ex, ez);
            rect(&mut pts, b.min + ey, ex, ez);
            rect(&mut pts, b.min + ez, ex, ey);
        }
        pts
    }
}

/// World poses of a sensor moving `step` meters per frame along the corridor
/// with a gentle sway in yaw and lateral offset.
pub fn corridor_trajectory(frames: usize, step: f64) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let s = i as f64;
            let yaw = 0.03 * (0.4 * s).sin();
            let y = 0.15 * (0.25 * s).sin();
            Pose::from_axis_angle(&Vector3::z(), yaw, Vector3::new(step * s, y, 1.4))
        })
        .collect()
}

/// Sensor-frame scan taken at `pose`.
pub fn corridor_scan(corridor: &Corridor, rng: &mut ChaCha8Rng, pose: &Pose, noise: f64) -> Vec<Vector3<f64>> {
    let inv = pose.inverse();
    corridor
        .sample_around(rng, &pose.translation, 15.0, 40.0)
        .into_iter()
        .map(|p| jitter(rng, inv.apply(&p), noise))
        .collect()
}

/// Ground truth relative to the first frame, the convention of the odometry output.
pub fn relative_to_first(poses: &[Pose]) -> Vec<Pose> {
    let first_inv = poses[0].inverse();
    poses.iter().map(|p| first_inv.compose(p)).collect()
}

/// Replaces `fraction` of the scan with a copy of the scan displaced rigidly by
/// `ghost`, as a mis-registered duplicate return would look.
pub fn ghost_corrupt(rng: &mut ChaCha8Rng, scan: &[Vector3<f64>], fraction: f64, ghost: &Pose) -> Vec<Vector3<f64>> {
    scan.iter()
        .map(|p| {
            if rng.random_range(0.0..1.0) < fraction {
                ghost.apply(p)
            } else {
                *p
            }
        })
        .collect()
}

/// Replaces `fraction` of the scan with uniform points in a ball of `radius`
/// around the sensor.
pub fn uniform_corrupt(rng: &mut ChaCha8Rng, scan: &[Vector3<f64>], fraction: f64, radius: f64) -> Vec<Vector3<f64>> {
    scan.iter()
        .map(|p| {
            if rng.random_range(0.0..1.0) < fraction {
                ball_outliers(rng, 1, Vector3::zeros(), radius)[0]
            } else {
                *p
            }
        })
        .collect()
}

/// Engine settings for the corridor: the frame voxel is scaled down to the
/// 5 m corridor width, everything else keeps its default.
pub fn corridor_config() -> lidar_odom::EngineConfig {
    lidar_odom::EngineConfig {
        frame_voxel: 0.25,
        ..Default::default()
    }
}

/// The 20-frame corridor run; frames listed in `corrupted` are replaced by
/// scans whose points are 80% uniform outliers.
pub fn corridor_frames(seed: u64, frames: usize, corrupted: &[usize]) -> (Vec<PointCloud>, Vec<Pose>) {
    let corridor = Corridor::standard();
    let gt = corridor_trajectory(frames, 0.5);
    let mut r = rng(seed);
    let scans = gt
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let scan = corridor_scan(&corridor, &mut r, p, 0.01);
            if corrupted.contains(&i) {
                PointCloud::new(uniform_corrupt(&mut r, &scan, 0.8, 15.0))
            } else {
                PointCloud::new(scan)
            }
        })
        .collect();
    (scans, relative_to_first(&gt))
}
