//! Deterministic synthetic orchard scenes.
//!
//! World frame: robot base at the origin, +Z up, +X toward the canopy. The
//! trellis is the vertical plane `x = trellis_x`; clusters open toward -X
//! (outside the canopy) with a random spread.

mod image_io;
mod render;

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use image_io::{
    decode_depth_png, decode_mask_png, encode_depth_png, encode_mask_png, encode_rgb_png,
    ImageError,
};
pub(crate) use render::ray_capsule;
pub use render::{render_frame, GroundTruthMasks, RenderConfig, RgbdFrame};

use crate::geometry::{point_segment_distance, Pose6D};

pub const SCENE_SCHEMA: &str = "orchard/1";
pub const MAX_FLOWERS_PER_CLUSTER: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed: could not satisfy `{constraint}` after {attempts} attempts")]
    Infeasible {
        constraint: &'static str,
        attempts: usize,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapsuleKind {
    TrellisWire,
    Post,
    Trunk,
    Branch,
}

/// Segment `p0p1` swept by a sphere of `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub radius: f64,
    pub kind: CapsuleKind,
}

impl Capsule {
    pub fn new(p0: Vector3<f64>, p1: Vector3<f64>, radius: f64, kind: CapsuleKind) -> Self {
        Self {
            p0,
            p1,
            radius,
            kind,
        }
    }

    /// Signed distance from `p` to the capsule surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        point_segment_distance(p, &self.p0, &self.p1) - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowerSpec {
    pub id: u32,
    pub position: Vector3<f64>,
    /// Unit normal of the flower disk, pointing out of the cluster cap.
    pub stigma_normal: Vector3<f64>,
    pub receptive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub id: u32,
    /// Bottom of the concave cap (king bloom position).
    pub center: Vector3<f64>,
    /// Unit outward approach direction.
    pub opening_axis: Vector3<f64>,
    pub flowers: Vec<FlowerSpec>,
    pub concavity_depth: f64,
}

impl ClusterSpec {
    /// Bounding sphere of the cluster's flower disks.
    pub fn bounds(&self, flower_radius: f64) -> (Vector3<f64>, f64) {
        let n = self.flowers.len().max(1) as f64;
        let center = self
            .flowers
            .iter()
            .fold(Vector3::zeros(), |acc, f| acc + f.position)
            / n;
        let radius = self
            .flowers
            .iter()
            .map(|f| (f.position - center).norm())
            .fold(0.0, f64::max)
            + flower_radius;
        (center, radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchardScene {
    pub schema: String,
    pub world_frame: String,
    pub rng_seed: u64,
    /// Radius of the flower disks (25 mm diameter by default).
    pub flower_radius: f64,
    pub clusters: Vec<ClusterSpec>,
    pub obstacles: Vec<Capsule>,
}

impl OrchardScene {
    pub fn empty(seed: u64) -> Self {
        Self {
            schema: SCENE_SCHEMA.into(),
            world_frame: WORLD_FRAME_NOTE.into(),
            rng_seed: seed,
            flower_radius: DEFAULT_FLOWER_RADIUS,
            clusters: Vec::new(),
            obstacles: Vec::new(),
        }
    }

    pub fn cluster(&self, id: u32) -> Option<&ClusterSpec> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn flower_count(&self) -> usize {
        self.clusters.iter().map(|c| c.flowers.len()).sum()
    }

    pub fn flowers(&self) -> impl Iterator<Item = (&ClusterSpec, &FlowerSpec)> {
        self.clusters
            .iter()
            .flat_map(|c| c.flowers.iter().map(move |f| (c, f)))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.schema != SCENE_SCHEMA {
            return Err(SceneError::InvalidScene(format!(
                "unsupported schema {:?}, expected {SCENE_SCHEMA:?}",
                self.schema
            )));
        }
        if !(self.flower_radius > 0.0) {
            return Err(SceneError::InvalidScene(
                "flower_radius must be positive".into(),
            ));
        }
        let mut ids: Vec<u32> = self.clusters.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::InvalidScene(
                "cluster ids are not unique".into(),
            ));
        }
        if ids.first() == Some(&0) || ids.last().is_some_and(|&id| id > u32::from(u16::MAX)) {
            return Err(SceneError::InvalidScene(
                "cluster ids must lie in 1..=65535 (0 is background)".into(),
            ));
        }
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        for c in &self.clusters {
            if !finite(&c.center)
                || !finite(&c.opening_axis)
                || (c.opening_axis.norm() - 1.0).abs() > 1e-9
            {
                return Err(SceneError::InvalidScene(format!(
                    "cluster {} geometry is invalid",
                    c.id
                )));
            }
            if c.flowers.is_empty() || c.flowers.len() > MAX_FLOWERS_PER_CLUSTER {
                return Err(SceneError::InvalidScene(format!(
                    "cluster {} has {} flowers, expected 1..={MAX_FLOWERS_PER_CLUSTER}",
                    c.id,
                    c.flowers.len()
                )));
            }
            for f in &c.flowers {
                if !finite(&f.position) || (f.stigma_normal.norm() - 1.0).abs() > 1e-9 {
                    return Err(SceneError::InvalidScene(format!(
                        "flower {} geometry is invalid",
                        f.id
                    )));
                }
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !finite(&o.p0) || !finite(&o.p1) {
                return Err(SceneError::InvalidScene(format!("obstacle {i} is invalid")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: OrchardScene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }
}

const WORLD_FRAME_NOTE: &str =
    "robot base frame: origin at arm base, +z up, +x toward the canopy, meters";
pub const DEFAULT_FLOWER_RADIUS: f64 = 0.0125;

/// Scene generation parameters.
///
/// Cluster cap geometry (`cap_radius`, `lateral_angle_deg`) and the
/// obstacle layout are simulator choices, not measured canopy statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub cluster_count: usize,
    /// Exact total flower count; when `None` per-cluster counts are drawn
    /// uniformly from `flowers_min..=flowers_max`.
    pub total_flowers: Option<usize>,
    pub flowers_min: usize,
    pub flowers_max: usize,
    pub trellis_x: f64,
    pub depth_jitter: f64,
    pub span_y: [f64; 2],
    pub span_z: [f64; 2],
    /// Maximum angle between a cluster's opening axis and the outward (-X) direction.
    pub axis_spread_deg: f64,
    /// Fraction of clusters that open into the canopy (+X).
    pub inward_fraction: f64,
    /// Radius of the sphere the concave cap lies on.
    pub cap_radius: f64,
    /// Polar angle of lateral blooms on the cap.
    pub lateral_angle_deg: f64,
    pub flower_radius: f64,
    pub receptive_fraction: f64,
    pub min_cluster_spacing: f64,
    pub obstacle_clearance: f64,
    pub retry_budget: usize,
    /// Heights of horizontal trellis wires.
    pub wire_heights: Vec<f64>,
    /// Distance of wires and posts behind the trellis plane.
    pub support_offset: f64,
    pub wire_radius: f64,
    pub post_positions_y: Vec<f64>,
    pub post_radius: f64,
    pub post_height: f64,
    pub trunk_positions_y: Vec<f64>,
    pub trunk_radius: f64,
    pub trunk_height: f64,
    /// Explicit branch capsules; also the place to inject hand-placed obstacles.
    pub branches: Vec<Capsule>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl SceneConfig {
    /// Sixteen clusters carrying 69 flowers.
    pub fn benchmark() -> Self {
        Self {
            cluster_count: 16,
            total_flowers: Some(69),
            flowers_min: 3,
            flowers_max: 6,
            trellis_x: 0.60,
            depth_jitter: 0.03,
            span_y: [-0.30, 0.30],
            span_z: [0.22, 0.62],
            axis_spread_deg: 30.0,
            inward_fraction: 0.0,
            cap_radius: 0.045,
            lateral_angle_deg: 38.0,
            flower_radius: DEFAULT_FLOWER_RADIUS,
            receptive_fraction: 1.0,
            min_cluster_spacing: 0.1,
            obstacle_clearance: 0.02,
            retry_budget: 500,
            wire_heights: vec![0.12, 0.72],
            support_offset: 0.06,
            wire_radius: 0.003,
            post_positions_y: vec![-0.7, 0.7],
            post_radius: 0.04,
            post_height: 1.4,
            trunk_positions_y: Vec::new(),
            trunk_radius: 0.05,
            trunk_height: 0.9,
            branches: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidConfig(msg));
        if self.flowers_min == 0
            || self.flowers_min > self.flowers_max
            || self.flowers_max > MAX_FLOWERS_PER_CLUSTER
        {
            return bad(format!(
                "flower bounds {}..={} must lie within 1..={MAX_FLOWERS_PER_CLUSTER}",
                self.flowers_min, self.flowers_max
            ));
        }
        if let Some(total) = self.total_flowers {
            if total < self.cluster_count || total > self.cluster_count * MAX_FLOWERS_PER_CLUSTER {
                return bad(format!(
                    "total_flowers {total} cannot be split over {} clusters",
                    self.cluster_count
                ));
            }
        }
        if !(self.trellis_x > 0.0) {
            return bad("trellis_x (row spacing from the base) must be positive".into());
        }
        if self.span_y[0] > self.span_y[1] || self.span_z[0] > self.span_z[1] {
            return bad("cluster spans must be ordered [min, max]".into());
        }
        if !(0.0..=1.0).contains(&self.inward_fraction)
            || !(0.0..=1.0).contains(&self.receptive_fraction)
        {
            return bad("fractions must lie in [0, 1]".into());
        }
        if !(self.cap_radius > 0.0
            && self.flower_radius > 0.0
            && self.wire_radius > 0.0
            && self.post_radius > 0.0)
        {
            return bad("radii must be positive".into());
        }
        if !(0.0..90.0).contains(&self.lateral_angle_deg)
            || !(0.0..=90.0).contains(&self.axis_spread_deg)
        {
            return bad("angles out of range".into());
        }
        Ok(())
    }

    fn supports(&self) -> Vec<Capsule> {
        let x = self.trellis_x + self.support_offset;
        let (y0, y1) = (
            self.post_positions_y
                .iter()
                .copied()
                .fold(self.span_y[0] - 0.1, f64::min),
            self.post_positions_y
                .iter()
                .copied()
                .fold(self.span_y[1] + 0.1, f64::max),
        );
        let mut out = Vec::new();
        for &z in &self.wire_heights {
            out.push(Capsule::new(
                Vector3::new(x, y0, z),
                Vector3::new(x, y1, z),
                self.wire_radius,
                CapsuleKind::TrellisWire,
            ));
        }
        for &y in &self.post_positions_y {
            out.push(Capsule::new(
                Vector3::new(x, y, 0.0),
                Vector3::new(x, y, self.post_height),
                self.post_radius,
                CapsuleKind::Post,
            ));
        }
        for &y in &self.trunk_positions_y {
            out.push(Capsule::new(
                Vector3::new(self.trellis_x + self.trunk_radius, y, 0.0),
                Vector3::new(self.trellis_x + self.trunk_radius, y, self.trunk_height),
                self.trunk_radius,
                CapsuleKind::Trunk,
            ));
        }
        out.extend(self.branches.iter().copied());
        out
    }
}

/// Generates a scene; identical `(config, seed)` give bit-identical scenes.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<OrchardScene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacles = config.supports();
    let counts = flower_counts(config, &mut rng);

    let mut clusters: Vec<ClusterSpec> = Vec::with_capacity(config.cluster_count);
    for (index, &count) in counts.iter().enumerate() {
        let id = index as u32 + 1;
        let mut placed = None;
        for _ in 0..config.retry_budget {
            let candidate = sample_cluster(config, id, count, &mut rng);
            let spaced = clusters.iter().all(|other| {
                (other.center - candidate.center).norm() >= config.min_cluster_spacing
            });
            let clear = candidate.flowers.iter().all(|f| {
                obstacles.iter().all(|o| {
                    o.surface_distance(&f.position)
                        >= config.flower_radius + config.obstacle_clearance
                })
            });
            if spaced && clear {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(cluster) => clusters.push(cluster),
            None => {
                return Err(SceneError::Infeasible {
                    constraint: "min_cluster_spacing / obstacle_clearance",
                    attempts: config.retry_budget,
                })
            }
        }
    }

    let scene = OrchardScene {
        schema: SCENE_SCHEMA.into(),
        world_frame: WORLD_FRAME_NOTE.into(),
        rng_seed: seed,
        flower_radius: config.flower_radius,
        clusters,
        obstacles,
    };
    scene.validate()?;
    Ok(scene)
}

fn flower_counts(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = config.cluster_count;
    let Some(total) = config.total_flowers else {
        return (0..n)
            .map(|_| rng.random_range(config.flowers_min..=config.flowers_max))
            .collect();
    };
    if n == 0 {
        return Vec::new();
    }
    let mut counts = vec![total / n; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in order.iter().take(total % n) {
        counts[i] += 1;
    }
    // Shuffle mass between clusters without leaving the configured bounds.
    let lo = config.flowers_min.min(total / n).max(1);
    let hi = config
        .flowers_max
        .max(total.div_ceil(n))
        .min(MAX_FLOWERS_PER_CLUSTER);
    for _ in 0..n {
        let (from, to) = (rng.random_range(0..n), rng.random_range(0..n));
        if from != to && counts[from] > lo && counts[to] < hi {
            counts[from] -= 1;
            counts[to] += 1;
        }
    }
    counts
}

fn sample_cluster(
    config: &SceneConfig,
    id: u32,
    flower_count: usize,
    rng: &mut ChaCha8Rng,
) -> ClusterSpec {
    let center = Vector3::new(
        config.trellis_x + rng.random_range(-config.depth_jitter..=config.depth_jitter),
        rng.random_range(config.span_y[0]..=config.span_y[1]),
        rng.random_range(config.span_z[0]..=config.span_z[1]),
    );
    let outward = if rng.random_bool(config.inward_fraction) {
        Vector3::x()
    } else {
        -Vector3::x()
    };
    let axis = sample_in_cone(&outward, config.axis_spread_deg.to_radians(), rng);

    let sphere_center = center + axis * config.cap_radius;
    let (u, v) = orthonormal_basis(&axis);
    let lateral = config.lateral_angle_deg.to_radians();
    let phase = rng.random_range(0.0..TAU);
    let laterals = flower_count.saturating_sub(1).max(1) as f64;
    let flowers = (0..flower_count)
        .map(|k| {
            let dir = if k == 0 {
                axis
            } else {
                let polar = (lateral + rng.random_range(-0.08..=0.08)).max(0.0);
                let azimuth =
                    phase + TAU * (k as f64 - 1.0) / laterals + rng.random_range(-0.15..=0.15);
                (axis * polar.cos() + (u * azimuth.cos() + v * azimuth.sin()) * polar.sin())
                    .normalize()
            };
            FlowerSpec {
                id: id * 10 + k as u32,
                position: sphere_center - dir * config.cap_radius,
                stigma_normal: dir,
                receptive: rng.random_bool(config.receptive_fraction),
            }
        })
        .collect();
    ClusterSpec {
        id,
        center,
        opening_axis: axis,
        flowers,
        concavity_depth: config.cap_radius * (1.0 - lateral.cos()),
    }
}

/// Direction drawn uniformly from the spherical cap of half-angle `spread` around `axis`.
pub fn sample_in_cone(axis: &Vector3<f64>, spread: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let cos_min = spread.cos();
    let cos_theta = rng.random_range(cos_min..=1.0);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = rng.random_range(0.0..TAU);
    let (u, v) = orthonormal_basis(axis);
    (axis * cos_theta + (u * phi.cos() + v * phi.sin()) * sin_theta).normalize()
}

/// Two unit vectors completing `axis` to a right-handed orthonormal basis.
pub fn orthonormal_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (u, v)
}

/// Default camera station: sensor at `(0, 0, 0.42)` looking along world +X
/// with image rows running downward.
pub fn default_camera_pose() -> Pose6D {
    use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
    let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        -Vector3::y(),
        -Vector3::z(),
        Vector3::x(),
    ]));
    Pose6D::new(
        Vector3::new(0.0, 0.0, 0.42),
        UnitQuaternion::from_rotation_matrix(&rotation),
    )
}
