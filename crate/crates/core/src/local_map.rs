//! Voxel-hashed local map of registered scans in the world frame.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::cloud::{voxel_cell, IndexedCloud, PointCloud, SurfaceNormal};
use crate::error::MapError;
use crate::se3::Pose;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub normal: SurfaceNormal,
    pub covariance: Matrix3<f64>,
}

/// Cells are kept in key order so snapshots are reproducible.
#[derive(Clone, Debug)]
pub struct LocalMap {
    voxel_size: f64,
    max_points_per_voxel: usize,
    max_range: f64,
    cells: BTreeMap<[i64; 3], Vec<MapPoint>>,
}

impl LocalMap {
    pub fn new(voxel_size: f64, max_points_per_voxel: usize, max_range: f64) -> Self {
        Self {
            voxel_size,
            max_points_per_voxel,
            max_range,
            cells: BTreeMap::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn point_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i64; 3], &[MapPoint])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn cell_center(&self, key: &[i64; 3]) -> Vector3<f64> {
        Vector3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * self.voxel_size
    }

    /// Moves `frame` into the world by `pose` and stores each point in its cell
    /// unless the cell is full. Returns the number of points stored.
    ///
    /// Normals are required; missing covariances are stored as zero.
    pub fn insert_frame(&mut self, frame: &PointCloud, pose: &Pose) -> usize {
        let Some(normals) = frame.normals() else {
            return 0;
        };
        let covs = frame.covariances();
        let r = pose.rotation;
        let mut added = 0;
        for (i, p) in frame.points().iter().enumerate() {
            let position = pose.apply(p);
            let cell = self.cells.entry(voxel_cell(&position, self.voxel_size)).or_default();
            if cell.len() >= self.max_points_per_voxel {
                continue;
            }
            cell.push(MapPoint {
                position,
                normal: SurfaceNormal {
                    direction: r * normals[i].direction,
                    degenerate: normals[i].degenerate,
                },
                covariance: covs.map_or(Matrix3::zeros(), |c| r * c[i] * r.transpose()),
            });
            added += 1;
        }
        added
    }

    /// Drops every cell whose center lies farther than `max_range` from `center`.
    pub fn prune(&mut self, center: &Vector3<f64>) {
        let (voxel, range_sq) = (self.voxel_size, self.max_range * self.max_range);
        self.cells.retain(|key, _| {
            let c = Vector3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * voxel;
            (c - center).norm_squared() <= range_sq
        });
    }

    /// Flattened, indexed copy of the map with normals and covariances.
    pub fn snapshot(&self) -> Result<IndexedCloud, MapError> {
        if self.cells.is_empty() {
            return Err(MapError::EmptyMap);
        }
        let n = self.point_count();
        let (mut pts, mut normals, mut covs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for p in self.cells.values().flatten() {
            pts.push(p.position);
            normals.push(p.normal);
            covs.push(p.covariance);
        }
        let cloud = PointCloud::new(pts).with_normals(normals)?.with_covariances(covs)?;
        Ok(IndexedCloud::new(cloud)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_normals(pts: Vec<Vector3<f64>>) -> PointCloud {
        let n = pts.len();
        PointCloud::new(pts)
            .with_normals(vec![
                SurfaceNormal {
                    direction: Vector3::x(),
                    degenerate: false
                };
                n
            ])
            .unwrap()
    }

    #[test]
    fn insert_into_empty_map() {
        let mut map = LocalMap::new(1.0, 20, 100.0);
        let frame = with_normals((0..10).map(|i| Vector3::new(i as f64 * 0.3, 0.0, 0.0)).collect());
        assert_eq!(map.insert_frame(&frame, &Pose::identity()), 10);
        assert_eq!(map.point_count(), 10);
        assert!(map.insert_frame(&PointCloud::new(vec![Vector3::zeros()]), &Pose::identity()) == 0);
    }

    #[test]
    fn floor_cells() {
        let mut map = LocalMap::new(1.0, 20, 100.0);
        map.insert_frame(&with_normals(vec![Vector3::new(0.49, 0.0, 0.0), Vector3::new(-0.01, 0.0, 0.0)]), &Pose::identity());
        let keys: Vec<[i64; 3]> = map.cells().map(|(k, _)| *k).collect();
        assert_eq!(keys, vec![[-1, 0, 0], [0, 0, 0]]);
    }

    #[test]
    fn second_identical_insert_adds_nothing_when_full() {
        let mut map = LocalMap::new(1.0, 4, 100.0);
        let mut pts = Vec::new();
        for cell in 0..3 {
            for k in 0..6 {
                pts.push(Vector3::new(cell as f64 + 0.1 * k as f64 + 0.05, 0.5, 0.5));
            }
        }
        let frame = with_normals(pts);
        assert_eq!(map.insert_frame(&frame, &Pose::identity()), 12);
        assert_eq!(map.insert_frame(&frame, &Pose::identity()), 0);
        assert!(map.cells().all(|(_, pts)| pts.len() == 4));
    }

    #[test]
    fn insert_rotates_normals_and_keeps_points_in_cells() {
        let mut map = LocalMap::new(0.7, 20, 100.0);
        let pose = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        map.insert_frame(&with_normals(vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(-3.0, 2.0, 1.0)]), &pose);
        for (key, pts) in map.cells() {
            for p in pts {
                assert_eq!(voxel_cell(&p.position, 0.7), *key);
                assert!((p.normal.direction - Vector3::y()).norm() < 1e-12);
            }
        }
        let snap = map.snapshot().unwrap();
        assert!(snap.cloud().points().iter().any(|p| (p - Vector3::new(1.0, 3.0, 3.0)).norm() < 1e-12));
    }

    #[test]
    fn empty_snapshot_is_an_error() {
        assert!(matches!(LocalMap::new(1.0, 1, 1.0).snapshot(), Err(MapError::EmptyMap)));
    }

    #[test]
    fn prune_cases() {
        let mut map = LocalMap::new(1.0, 20, 10.0);
        map.insert_frame(&with_normals(vec![Vector3::new(1.0, 1.0, 0.0), Vector3::new(-3.0, 2.0, 0.0)]), &Pose::identity());
        map.prune(&Vector3::zeros());
        assert_eq!(map.cell_count(), 2);
        map.prune(&Vector3::new(20.0, 0.0, 0.0));
        assert!(map.is_empty());
    }

    #[test]
    fn prune_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vector3<f64>> = (0..2000)
            .map(|_| Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)))
            .collect();
        let mut map = LocalMap::new(2.0, 3, 30.0);
        map.insert_frame(&with_normals(pts), &Pose::identity());
        let before: Vec<[i64; 3]> = map.cells().map(|(k, _)| *k).collect();
        let center = Vector3::new(10.0, -5.0, 1.0);
        let expected: Vec<[i64; 3]> = before
            .iter()
            .copied()
            .filter(|k| {
                let c = Vector3::new(k[0] as f64 * 2.0 + 1.0, k[1] as f64 * 2.0 + 1.0, k[2] as f64 * 2.0 + 1.0);
                (c - center).norm() <= 30.0
            })
            .collect();
        map.prune(&center);
        let after: Vec<[i64; 3]> = map.cells().map(|(k, _)| *k).collect();
        assert_eq!(after, expected);
        assert!(map.point_count() <= after.len() * 3);
    }
}
