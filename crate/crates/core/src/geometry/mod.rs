//! Camera model, depth deprojection, point neighborhoods, surface normals
//! and cluster pose estimation.

mod camera;
mod cloud;
mod kdtree;
mod normals;
mod pose;
mod segment;

use nalgebra::Vector3;

pub use camera::{CameraModel, DEFAULT_DEPTH_MAX, DEFAULT_DEPTH_MIN};
pub use cloud::PointCloud;
pub use kdtree::KdTree;
pub use normals::{
    estimate_cluster_pose, estimate_point_normals, mean_of, neighborhood_normal, orient_toward,
    NormalParams,
};
pub use pose::{approach_frame, Pose6D, WORLD_UP};
pub use segment::{
    closest_points_segment_segment, point_segment_distance, segment_segment_distance,
};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid depth value {0}")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) lies outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("mean normal has norm {0:.3e}; orientation is undefined")]
    DegenerateOrientation(f64),
    #[error("point cloud format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neumaier-compensated running sum of 3-vectors. Summation order is the
/// caller's iteration order, so results are reproducible run to run.
#[derive(Debug, Clone, Copy, Default)]
pub struct VectorSum {
    sum: Vector3<f64>,
    compensation: Vector3<f64>,
}

impl VectorSum {
    pub fn add(&mut self, v: &Vector3<f64>) {
        for i in 0..3 {
            let t = self.sum[i] + v[i];
            if self.sum[i].abs() >= v[i].abs() {
                self.compensation[i] += (self.sum[i] - t) + v[i];
            } else {
                self.compensation[i] += (v[i] - t) + self.sum[i];
            }
            self.sum[i] = t;
        }
    }

    pub fn value(&self) -> Vector3<f64> {
        self.sum + self.compensation
    }
}
