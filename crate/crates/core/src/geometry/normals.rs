use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{approach_frame, GeometryError, KdTree, PointCloud, Pose6D, VectorSum};

/// Neighborhood definition for per-point normal estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalParams {
    /// Neighborhood radius in meters.
    pub radius: f64,
    /// Neighbor count used when fewer than three points fall inside `radius`.
    pub k_neighbors: usize,
    /// Sensor origin the refined normals are oriented toward.
    pub viewpoint: [f64; 3],
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            radius: 0.02,
            k_neighbors: 30,
            viewpoint: [0.0; 3],
        }
    }
}

impl NormalParams {
    pub fn with_viewpoint(mut self, viewpoint: Vector3<f64>) -> Self {
        self.viewpoint = [viewpoint.x, viewpoint.y, viewpoint.z];
        self
    }

    pub fn viewpoint(&self) -> Vector3<f64> {
        Vector3::from(self.viewpoint)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(GeometryError::InvalidArgument(format!(
                "normal radius must be positive, got {}",
                self.radius
            )));
        }
        if self.k_neighbors < 3 {
            return Err(GeometryError::InvalidArgument(format!(
                "k_neighbors must be at least 3, got {}",
                self.k_neighbors
            )));
        }
        if !self.viewpoint.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidArgument(
                "viewpoint must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Variance below this (m²) means every neighbor sits on the same spot.
const COINCIDENT_VARIANCE: f64 = 1e-20;
/// Middle/largest eigenvalue ratio below this means the neighborhood is a line.
const COLLINEAR_RATIO: f64 = 1e-9;

/// Estimates a unit surface normal per point.
///
/// Each point's neighborhood is every point within `radius` (itself
/// included), or its `k_neighbors` nearest when fewer than three lie inside
/// the radius. The normal is the eigenvector of the neighborhood covariance
/// with the smallest eigenvalue, flipped so it faces the viewpoint.
/// Coincident or collinear neighborhoods yield `None` for that point.
pub fn estimate_point_normals(
    cloud: &PointCloud,
    params: &NormalParams,
) -> Result<PointCloud, GeometryError> {
    params.validate()?;
    cloud.validate()?;
    if cloud.len() < params.k_neighbors {
        return Err(GeometryError::TooFewPoints {
            needed: params.k_neighbors,
            found: cloud.len(),
        });
    }
    let tree = KdTree::new(&cloud.points);
    let viewpoint = params.viewpoint();
    let normals: Vec<Option<Vector3<f64>>> = cloud
        .points
        .par_iter()
        .map(|p| {
            let mut neighbors = tree.within_radius(p, params.radius);
            if neighbors.len() < 3 {
                neighbors = tree.nearest(p, params.k_neighbors);
            }
            neighborhood_normal(&cloud.points, &neighbors).map(|n| orient_toward(n, p, &viewpoint))
        })
        .collect();
    Ok(PointCloud {
        normals: Some(normals),
        ..cloud.clone()
    })
}

/// Smallest-eigenvalue eigenvector of the covariance of `points[indices]`.
pub fn neighborhood_normal(points: &[Vector3<f64>], indices: &[usize]) -> Option<Vector3<f64>> {
    if indices.len() < 3 {
        return None;
    }
    let centroid = mean_of(indices.iter().map(|&i| points[i]))?;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    cov /= indices.len() as f64;

    let eigen = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let (smallest, middle, largest) = (
        order[0],
        eigen.eigenvalues[order[1]],
        eigen.eigenvalues[order[2]],
    );
    if largest <= COINCIDENT_VARIANCE || middle <= COLLINEAR_RATIO * largest {
        return None;
    }
    let normal = eigen.eigenvectors.column(smallest).into_owned();
    let norm = normal.norm();
    (norm > 0.0).then(|| normal / norm)
}

/// Refinement step: flip `normal` so that `dot(normal, viewpoint - point) >= 0`.
pub fn orient_toward(
    normal: Vector3<f64>,
    point: &Vector3<f64>,
    viewpoint: &Vector3<f64>,
) -> Vector3<f64> {
    if normal.dot(&(viewpoint - point)) < 0.0 {
        -normal
    } else {
        normal
    }
}

/// Compensated arithmetic mean; `None` for an empty input.
pub fn mean_of<I: IntoIterator<Item = Vector3<f64>>>(values: I) -> Option<Vector3<f64>> {
    let mut sum = VectorSum::default();
    let mut n = 0usize;
    for v in values {
        sum.add(&v);
        n += 1;
    }
    (n > 0).then(|| sum.value() / n as f64)
}

/// Pose of one labelled cluster.
///
/// Position is the mean of the cluster's points. The approach axis (pose +Z)
/// is the normalized mean of the refined per-point normals; invalid normals
/// are left out of the mean. Normals already attached to `cloud` are reused,
/// otherwise they are estimated on the cluster's own points.
pub fn estimate_cluster_pose(
    cloud: &PointCloud,
    cluster_id: u32,
    params: &NormalParams,
) -> Result<Pose6D, GeometryError> {
    params.validate()?;
    let cluster = cloud.select_cluster(cluster_id);
    if cluster.len() < params.k_neighbors {
        return Err(GeometryError::TooFewPoints {
            needed: params.k_neighbors,
            found: cluster.len(),
        });
    }
    let cluster = if cluster.normals.is_some() {
        cluster
    } else {
        estimate_point_normals(&cluster, params)?
    };
    let normals = cluster.normals.as_deref().unwrap_or_default();
    let valid: Vec<Vector3<f64>> = normals.iter().flatten().copied().collect();
    if valid.len() < params.k_neighbors {
        return Err(GeometryError::TooFewPoints {
            needed: params.k_neighbors,
            found: valid.len(),
        });
    }
    let position = mean_of(cluster.points.iter().copied()).expect("cluster is non-empty");
    let mean_normal = mean_of(valid).expect("at least k valid normals");
    let norm = mean_normal.norm();
    if norm < 1e-6 {
        return Err(GeometryError::DegenerateOrientation(norm));
    }
    Ok(Pose6D::new(
        position,
        approach_frame(&(mean_normal / norm))?,
    ))
}
