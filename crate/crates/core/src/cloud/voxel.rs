use std::collections::HashMap;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::CloudError;

/// Integer cell containing `p` (floor semantics on every axis).
#[inline]
pub fn voxel_cell(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Keeps one point per occupied cell: the one closest to the mean of the cell's
/// points, lowest input index on ties. Output keeps input order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, CloudError> {
    if !(voxel > 0.0) {
        return Err(CloudError::NonPositiveVoxel(voxel));
    }
    struct Cell {
        sum: Vector3<f64>,
        members: Vec<usize>,
    }
    let mut cells: HashMap<[i64; 3], Cell> = HashMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let cell = cells.entry(voxel_cell(p, voxel)).or_insert_with(|| Cell {
            sum: Vector3::zeros(),
            members: Vec::new(),
        });
        cell.sum += p;
        cell.members.push(i);
    }
    let pts = cloud.points();
    let mut keep: Vec<usize> = cells
        .values()
        .map(|cell| {
            let centroid = cell.sum / cell.members.len() as f64;
            let mut best = cell.members[0];
            let mut best_d = (pts[best] - centroid).norm_squared();
            for &i in &cell.members[1..] {
                let d = (pts[i] - centroid).norm_squared();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    keep.sort_unstable();
    Ok(cloud.select(&keep))
}
