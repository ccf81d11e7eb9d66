//! Point-cloud container and per-point local geometry.

mod features;
mod kdtree;
mod voxel;

use nalgebra::{Matrix3, Vector3};

pub use features::{
    compute_covariances, compute_densities, compute_normals, density_filter, density_threshold,
    estimate_local_geometry, SurfaceNormal, DEGENERATE_EIGEN_GAP,
};
pub use kdtree::{Neighbor, NeighborIndex};
pub use voxel::{voxel_cell, voxel_downsample};

use crate::error::CloudError;
use crate::se3::Pose;

/// Points plus optional per-point attributes kept in lockstep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    covariances: Option<Vec<Matrix3<f64>>>,
    normals: Option<Vec<SurfaceNormal>>,
    densities: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn covariances(&self) -> Option<&[Matrix3<f64>]> {
        self.covariances.as_deref()
    }

    pub fn normals(&self) -> Option<&[SurfaceNormal]> {
        self.normals.as_deref()
    }

    pub fn densities(&self) -> Option<&[u32]> {
        self.densities.as_deref()
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    fn check_len(&self, attribute: &'static str, len: usize) -> Result<(), CloudError> {
        if len == self.points.len() {
            Ok(())
        } else {
            Err(CloudError::AttributeLength {
                attribute,
                len,
                points: self.points.len(),
            })
        }
    }

    pub fn with_covariances(mut self, covariances: Vec<Matrix3<f64>>) -> Result<Self, CloudError> {
        self.check_len("covariances", covariances.len())?;
        self.covariances = Some(covariances);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<SurfaceNormal>) -> Result<Self, CloudError> {
        self.check_len("normals", normals.len())?;
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_densities(mut self, densities: Vec<u32>) -> Result<Self, CloudError> {
        self.check_len("densities", densities.len())?;
        self.densities = Some(densities);
        Ok(self)
    }

    /// Sub-cloud of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        fn pick<T: Copy>(src: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            src.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            covariances: pick(&self.covariances, indices),
            normals: pick(&self.normals, indices),
            densities: pick(&self.densities, indices),
        }
    }

    /// Rigidly moves the cloud; covariances and normals are rotated with it.
    pub fn transformed(&self, pose: &Pose) -> Self {
        let r = pose.rotation;
        Self {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            covariances: self
                .covariances
                .as_ref()
                .map(|c| c.iter().map(|c| r * c * r.transpose()).collect()),
            normals: self.normals.as_ref().map(|n| {
                n.iter()
                    .map(|n| SurfaceNormal {
                        direction: r * n.direction,
                        degenerate: n.degenerate,
                    })
                    .collect()
            }),
            densities: self.densities.clone(),
        }
    }

    /// Appends `other`; attributes survive only when both sides carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        fn merge<T: Copy>(a: &mut Option<Vec<T>>, b: &Option<Vec<T>>, a_empty: bool) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.extend_from_slice(b),
                (None, Some(b)) if a_empty => *a = Some(b.clone()),
                _ => *a = None,
            }
        }
        let empty = self.points.is_empty();
        merge(&mut self.covariances, &other.covariances, empty);
        merge(&mut self.normals, &other.normals, empty);
        merge(&mut self.densities, &other.densities, empty);
        self.points.extend_from_slice(&other.points);
    }
}

/// A frozen cloud together with its spatial index.
#[derive(Clone, Debug)]
pub struct IndexedCloud {
    cloud: PointCloud,
    index: NeighborIndex,
}

impl IndexedCloud {
    pub fn new(cloud: PointCloud) -> Result<Self, CloudError> {
        let index = NeighborIndex::build(cloud.points())?;
        Ok(Self { cloud, index })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}
