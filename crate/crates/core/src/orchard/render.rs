use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Capsule, CapsuleKind, OrchardScene};
use crate::geometry::{CameraModel, Pose6D};

/// Depth sensor noise. Both terms default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Probability that a pixel with a surface hit reports no depth.
    pub dropout_rate: f64,
    /// Gaussian depth noise sigma = `noise_coeff * depth^2`, meters.
    pub noise_coeff: f64,
}

/// Registered depth and color images with the camera that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub camera: CameraModel,
    /// Camera-to-world transform.
    pub camera_pose: Pose6D,
    /// Row-major depth along the optical axis in meters; NaN where invalid.
    pub depth: Vec<f64>,
    /// Row-major RGB8 triples.
    pub rgb: Vec<u8>,
}

impl RgbdFrame {
    pub fn width(&self) -> u32 {
        self.camera.width
    }

    pub fn height(&self) -> u32 {
        self.camera.height
    }

    pub fn depth_at(&self, index: usize) -> Option<f64> {
        self.depth.get(index).copied().filter(|d| d.is_finite())
    }

    /// Pixel center of a row-major index.
    pub fn pixel_of(&self, index: usize) -> (f64, f64) {
        let w = self.camera.width as usize;
        ((index % w) as f64, (index / w) as f64)
    }

    /// World-frame point seen at `index`, if that pixel has valid depth.
    pub fn world_point(&self, index: usize) -> Option<Vector3<f64>> {
        let depth = self.depth_at(index)?;
        let (u, v) = self.pixel_of(index);
        let local = self.camera.deproject(u, v, depth).ok()?;
        Some(self.camera_pose.transform_point(&local))
    }
}

/// Per-pixel cluster ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMasks {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u16>,
}

impl GroundTruthMasks {
    /// Sorted ids of clusters with at least one visible pixel.
    pub fn visible_ids(&self) -> Vec<u16> {
        let mut seen = vec![false; usize::from(u16::MAX) + 1];
        for &id in &self.ids {
            seen[usize::from(id)] = true;
        }
        (1..=u16::MAX).filter(|&id| seen[usize::from(id)]).collect()
    }

    pub fn pixels_of(&self, id: u16) -> Vec<u32> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == id)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

const BACKGROUND_RGB: [u8; 3] = [58, 104, 47];

#[derive(Clone, Copy)]
enum Hit {
    Flower { cluster: u16, facing: f64 },
    Obstacle(CapsuleKind),
}

/// Ray casts `scene` into a depth + color frame and ground-truth masks.
///
/// Flowers are oriented disks, obstacles are capsules; the nearest hit per
/// pixel wins. Noise is drawn from a per-row stream of `seed`, so output does
/// not depend on thread scheduling.
pub fn render_frame(
    scene: &OrchardScene,
    camera: &CameraModel,
    camera_pose: &Pose6D,
    config: &RenderConfig,
    seed: u64,
) -> (RgbdFrame, GroundTruthMasks) {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let origin = camera_pose.position;
    let rotation = camera_pose.orientation;
    let bounds: Vec<(Vector3<f64>, f64)> = scene
        .clusters
        .iter()
        .map(|c| c.bounds(scene.flower_radius))
        .collect();

    let mut depth = vec![f64::NAN; w * h];
    let mut rgb = vec![0u8; w * h * 3];
    let mut ids = vec![0u16; w * h];

    depth
        .par_chunks_mut(w)
        .zip(rgb.par_chunks_mut(w * 3))
        .zip(ids.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, ((depth_row, rgb_row), id_row))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            for col in 0..w {
                let local = camera.ray_direction(col as f64, row as f64);
                let scale = local.norm();
                let dir = rotation * (local / scale);
                let mut color = BACKGROUND_RGB;
                if let Some((t, hit)) = cast(scene, &bounds, &origin, &dir) {
                    let z = t / scale;
                    color = shade(hit);
                    if let Hit::Flower { cluster, .. } = hit {
                        id_row[col] = cluster;
                    }
                    let dropped =
                        config.dropout_rate > 0.0 && rng.random::<f64>() < config.dropout_rate;
                    let noisy = if config.noise_coeff > 0.0 {
                        z + config.noise_coeff * z * z * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        z
                    };
                    if !dropped && camera.depth_in_range(noisy) {
                        depth_row[col] = noisy;
                    }
                }
                rgb_row[col * 3..col * 3 + 3].copy_from_slice(&color);
            }
        });

    let frame = RgbdFrame {
        camera: *camera,
        camera_pose: *camera_pose,
        depth,
        rgb,
    };
    let masks = GroundTruthMasks {
        width: camera.width,
        height: camera.height,
        ids,
    };
    (frame, masks)
}

fn cast(
    scene: &OrchardScene,
    bounds: &[(Vector3<f64>, f64)],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, Hit)> {
    let mut best: Option<(f64, Hit)> = None;
    let mut consider = |t: f64, hit: Hit| {
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, hit));
        }
    };
    for (cluster, (center, radius)) in scene.clusters.iter().zip(bounds) {
        if ray_sphere(origin, dir, center, *radius).is_none() {
            continue;
        }
        for flower in &cluster.flowers {
            if let Some(t) = ray_disk(
                origin,
                dir,
                &flower.position,
                &flower.stigma_normal,
                scene.flower_radius,
            ) {
                let facing = flower.stigma_normal.dot(dir).abs();
                consider(
                    t,
                    Hit::Flower {
                        cluster: cluster.id as u16,
                        facing,
                    },
                );
            }
        }
    }
    for capsule in &scene.obstacles {
        if let Some(t) = ray_capsule(origin, dir, capsule) {
            consider(t, Hit::Obstacle(capsule.kind));
        }
    }
    best
}

fn shade(hit: Hit) -> [u8; 3] {
    match hit {
        Hit::Flower { facing, .. } => {
            let k = 0.55 + 0.45 * facing;
            [(242.0 * k) as u8, (228.0 * k) as u8, (236.0 * k) as u8]
        }
        Hit::Obstacle(CapsuleKind::TrellisWire) => [128, 128, 132],
        Hit::Obstacle(CapsuleKind::Post) => [150, 112, 70],
        Hit::Obstacle(CapsuleKind::Trunk) => [96, 68, 44],
        Hit::Obstacle(CapsuleKind::Branch) => [112, 82, 52],
    }
}

const RAY_EPS: f64 = 1e-9;

/// Nearest positive ray parameter (unit `dir`) hitting the sphere.
fn ray_sphere(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    center: &Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [-b - sq, -b + sq].into_iter().find(|&t| t > RAY_EPS)
}

pub(crate) fn ray_disk(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    center: &Vector3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let denom = normal.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = normal.dot(&(center - origin)) / denom;
    if t <= RAY_EPS {
        return None;
    }
    ((origin + dir * t - center).norm_squared() <= radius * radius).then_some(t)
}

pub(crate) fn ray_capsule(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    capsule: &Capsule,
) -> Option<f64> {
    let r = capsule.radius;
    let axis = capsule.p1 - capsule.p0;
    let len2 = axis.norm_squared();
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if t > RAY_EPS && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    if len2 > 1e-18 {
        // Infinite cylinder, restricted to the segment's extent.
        let oa = origin - capsule.p0;
        let dir_perp = dir - axis * (dir.dot(&axis) / len2);
        let oa_perp = oa - axis * (oa.dot(&axis) / len2);
        let a = dir_perp.norm_squared();
        if a > 1e-18 {
            let b = dir_perp.dot(&oa_perp);
            let c = oa_perp.norm_squared() - r * r;
            let disc = b * b - a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / a, (-b + sq) / a] {
                    let s = (oa + dir * t).dot(&axis) / len2;
                    if (0.0..=1.0).contains(&s) {
                        keep(t);
                    }
                }
            }
        }
    }
    for end in [capsule.p0, capsule.p1] {
        let oc = origin - end;
        let b = oc.dot(dir);
        let disc = b * b - (oc.norm_squared() - r * r);
        if disc >= 0.0 {
            let sq = disc.sqrt();
            keep(-b - sq);
            keep(-b + sq);
        }
    }
    best
}
