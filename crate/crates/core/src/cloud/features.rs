use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{NeighborIndex, PointCloud};
use crate::error::CloudError;

/// Two smallest covariance eigenvalues closer than this mark a normal as degenerate.
pub const DEGENERATE_EIGEN_GAP: f64 = 1e-12;

/// Unit surface normal; `degenerate` normals are skipped by point-to-plane residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceNormal {
    pub direction: Vector3<f64>,
    pub degenerate: bool,
}

/// Neighbor count within `radius` of every point, the point itself included.
pub fn compute_densities(cloud: &PointCloud, radius: f64) -> Result<Vec<u32>, CloudError> {
    if !(radius > 0.0) {
        return Err(CloudError::NonPositiveRadius(radius));
    }
    let index = NeighborIndex::build(cloud.points())?;
    Ok(cloud
        .points()
        .par_iter()
        .map(|p| index.count_within(p, radius) as u32)
        .collect())
}

/// Nearest-rank percentile: the `ceil(alpha / 100 * n)`-th smallest value (1-based,
/// at least the first).
pub fn density_threshold(densities: &[u32], alpha: f64) -> Result<u32, CloudError> {
    if densities.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    if !(0.0..=100.0).contains(&alpha) {
        return Err(CloudError::PercentileOutOfRange(alpha));
    }
    let mut sorted = densities.to_vec();
    sorted.sort_unstable();
    let rank = ((alpha / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Keeps the points whose density reaches the `alpha` percentile, preserving order.
/// The returned cloud carries the surviving densities.
pub fn density_filter(cloud: &PointCloud, radius: f64, alpha: f64) -> Result<PointCloud, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let densities = compute_densities(cloud, radius)?;
    let threshold = density_threshold(&densities, alpha)?;
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| densities[i] >= threshold).collect();
    let mut out = cloud.select(&keep);
    out.densities = Some(keep.iter().map(|&i| densities[i]).collect());
    Ok(out)
}

/// Population covariance (divisor `k`) of the given neighbor points.
pub(crate) fn neighborhood_covariance<'a>(
    neighbors: impl Iterator<Item = &'a Vector3<f64>> + Clone,
) -> Matrix3<f64> {
    let mut mean = Vector3::zeros();
    let mut n = 0usize;
    for p in neighbors.clone() {
        mean += p;
        n += 1;
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / n as f64
}

fn normal_from_covariance(cov: &Matrix3<f64>, point: &Vector3<f64>, viewpoint: &Vector3<f64>) -> SurfaceNormal {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut direction: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let norm = direction.norm();
    if norm > 0.0 {
        direction /= norm;
    } else {
        direction = Vector3::z();
    }
    if direction.dot(&(viewpoint - point)) < 0.0 {
        direction = -direction;
    }
    let degenerate = eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]] <= DEGENERATE_EIGEN_GAP;
    SurfaceNormal {
        direction,
        degenerate,
    }
}

fn check_k(cloud: &PointCloud, k: usize) -> Result<(), CloudError> {
    let needed = k.max(3);
    if cloud.len() < needed {
        return Err(CloudError::TooFewPoints {
            needed,
            available: cloud.len(),
        });
    }
    Ok(())
}

fn knn_covariances(cloud: &PointCloud, k: usize) -> Result<Vec<Matrix3<f64>>, CloudError> {
    check_k(cloud, k)?;
    let index = NeighborIndex::build(cloud.points())?;
    let pts = cloud.points();
    Ok(pts
        .par_iter()
        .map(|p| {
            let nn = index.knn(p, k);
            neighborhood_covariance(nn.iter().map(|n| &pts[n.index]))
        })
        .collect())
}

/// Populates covariances from each point's `k` nearest neighbors (self included).
pub fn compute_covariances(cloud: &PointCloud, k: usize) -> Result<PointCloud, CloudError> {
    let covs = knn_covariances(cloud, k)?;
    cloud.clone().with_covariances(covs)
}

/// Populates normals as the least-variance eigenvector of the k-NN covariance,
/// oriented toward `viewpoint`.
pub fn compute_normals(cloud: &PointCloud, k: usize, viewpoint: &Vector3<f64>) -> Result<PointCloud, CloudError> {
    let covs = knn_covariances(cloud, k)?;
    let normals = covs
        .par_iter()
        .zip(cloud.points().par_iter())
        .map(|(c, p)| normal_from_covariance(c, p, viewpoint))
        .collect();
    cloud.clone().with_normals(normals)
}

/// Covariances and normals from a single neighbor pass.
pub fn estimate_local_geometry(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud, CloudError> {
    let covs = knn_covariances(cloud, k)?;
    let normals = covs
        .par_iter()
        .zip(cloud.points().par_iter())
        .map(|(c, p)| normal_from_covariance(c, p, viewpoint))
        .collect();
    cloud.clone().with_covariances(covs)?.with_normals(normals)
}
