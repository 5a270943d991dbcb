//! Seeded inputs shared by the benchmarks.

use nalgebra::Vector3;
use ppln_core::sequencing::TourSite;
use ppln_core::{JointConfig, PointCloud, TourProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points on a sphere of radius `r`, normals unset.
pub fn sphere_cloud(n: usize, r: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let len = v.norm();
            if len > 1e-3 && len <= 1.0 {
                break v * (r / len);
            }
        })
        .collect();
    PointCloud::new(points).expect("finite points")
}

/// Uniform sites in the unit cube with a start at the origin.
pub fn tour_problem(n: usize, seed: u64) -> TourProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = (0..n as u32)
        .map(|i| TourSite {
            cluster_id: i + 1,
            position: Vector3::new(
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ),
        })
        .collect();
    TourProblem::new(Vector3::zeros(), sites).expect("unique ids")
}

pub fn joint_configs(n: usize, seed: u64) -> Vec<JointConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| JointConfig::new(std::array::from_fn(|_| rng.random_range(-3.0..3.0))))
        .collect()
}

/// Three groups of `size` values with ties.
pub fn rank_groups(size: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|g| {
            (0..size)
                .map(|_| (rng.random_range(0.0..8.0f64) + g as f64).round())
                .collect()
        })
        .collect()
}
