//! Instance masks, segmentation back ends, AP evaluation, and target
//! filtering with operator review.

mod ap;
mod targets;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::orchard::{decode_mask_png, GroundTruthMasks, ImageError, RgbdFrame};

pub use ap::{average_precision, iou, ApMatch, ApReport};
pub use targets::{
    apply_operator_review, auto_filter, build_targets, close_review, ClusterTarget, Decision,
    FilterConfig, PerceptionConfig, RejectReason, ReviewDecision, TargetState,
};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("frame sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid mask set: {0}")]
    InvalidMask(String),
    #[error("cluster {0} not found")]
    NotFound(u32),
    #[error("cluster {cluster_id} is {state}; cannot {action}")]
    InvalidState {
        cluster_id: u32,
        state: String,
        action: &'static str,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskInstance {
    pub instance_id: u32,
    pub confidence: f64,
    /// Sorted, unique row-major pixel indices.
    pub pixels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMaskSet {
    pub width: u32,
    pub height: u32,
    pub instances: Vec<MaskInstance>,
}

impl InstanceMaskSet {
    /// Sorts and deduplicates each instance's pixels, then validates.
    pub fn new(
        width: u32,
        height: u32,
        mut instances: Vec<MaskInstance>,
    ) -> Result<Self, PerceptionError> {
        for inst in &mut instances {
            inst.pixels.sort_unstable();
            inst.pixels.dedup();
        }
        let set = Self {
            width,
            height,
            instances,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let limit = u64::from(self.width) * u64::from(self.height);
        for inst in &self.instances {
            if !(0.0..=1.0).contains(&inst.confidence) {
                return Err(PerceptionError::InvalidMask(format!(
                    "instance {} confidence {} outside [0, 1]",
                    inst.instance_id, inst.confidence
                )));
            }
            if inst.pixels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PerceptionError::InvalidMask(format!(
                    "instance {} pixels are not sorted",
                    inst.instance_id
                )));
            }
            if inst.pixels.last().is_some_and(|&p| u64::from(p) >= limit) {
                return Err(PerceptionError::InvalidMask(format!(
                    "instance {} has a pixel outside the frame",
                    inst.instance_id
                )));
            }
        }
        Ok(())
    }

    /// One full-confidence instance per visible cluster id.
    pub fn from_label_image(masks: &GroundTruthMasks) -> Self {
        let mut by_id: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for (i, &id) in masks.ids.iter().enumerate() {
            if id != 0 {
                by_id.entry(id).or_default().push(i as u32);
            }
        }
        let instances = by_id
            .into_iter()
            .map(|(id, pixels)| MaskInstance {
                instance_id: u32::from(id),
                confidence: 1.0,
                pixels,
            })
            .collect();
        Self {
            width: masks.width,
            height: masks.height,
            instances,
        }
    }
}

/// Source of cluster instance masks for a frame.
pub trait Segmenter {
    fn segment(&self, frame: &RgbdFrame) -> Result<InstanceMaskSet, PerceptionError>;
}

/// Segmenter backed by ground-truth masks, with optional boundary noise.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    pub truth: GroundTruthMasks,
    /// Positive values dilate each mask by that many pixels, negative erode.
    pub boundary_px: i32,
    /// Confidences are drawn from `[1 - confidence_noise, 1]`.
    pub confidence_noise: f64,
    pub seed: u64,
}

impl OracleSegmenter {
    pub fn new(truth: GroundTruthMasks) -> Self {
        Self {
            truth,
            boundary_px: 0,
            confidence_noise: 0.0,
            seed: 0,
        }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, frame: &RgbdFrame) -> Result<InstanceMaskSet, PerceptionError> {
        check_dims(frame, self.truth.width, self.truth.height)?;
        let mut set = InstanceMaskSet::from_label_image(&self.truth);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for inst in &mut set.instances {
            if self.boundary_px != 0 {
                inst.pixels = morph(
                    &inst.pixels,
                    self.truth.width,
                    self.truth.height,
                    self.boundary_px,
                );
            }
            if self.confidence_noise > 0.0 {
                inst.confidence =
                    (1.0 - self.confidence_noise * rng.random::<f64>()).clamp(0.0, 1.0);
            }
        }
        set.instances.retain(|i| !i.pixels.is_empty());
        set.validate()?;
        Ok(set)
    }
}

/// Segmenter that reads a 16-bit label PNG from disk.
#[derive(Debug, Clone)]
pub struct FileSegmenter {
    pub mask_path: PathBuf,
    /// Per-instance confidences; missing ids get 1.0.
    pub confidences: BTreeMap<u32, f64>,
}

impl Segmenter for FileSegmenter {
    fn segment(&self, frame: &RgbdFrame) -> Result<InstanceMaskSet, PerceptionError> {
        let bytes = std::fs::read(&self.mask_path)?;
        let labels = decode_mask_png(&bytes)?;
        check_dims(frame, labels.width, labels.height)?;
        let mut set = InstanceMaskSet::from_label_image(&labels);
        for inst in &mut set.instances {
            if let Some(&c) = self.confidences.get(&inst.instance_id) {
                inst.confidence = c;
            }
        }
        set.validate()?;
        Ok(set)
    }
}

fn check_dims(frame: &RgbdFrame, width: u32, height: u32) -> Result<(), PerceptionError> {
    if frame.width() != width || frame.height() != height {
        return Err(PerceptionError::DimensionMismatch(
            frame.width(),
            frame.height(),
            width,
            height,
        ));
    }
    Ok(())
}

/// Repeated 4-neighbor dilation (`steps > 0`) or erosion (`steps < 0`).
fn morph(pixels: &[u32], width: u32, height: u32, steps: i32) -> Vec<u32> {
    let (w, h) = (width as usize, height as usize);
    let mut grid = vec![false; w * h];
    for &p in pixels {
        grid[p as usize] = true;
    }
    let dilate = steps > 0;
    for _ in 0..steps.unsigned_abs() {
        let prev = grid.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let neighbors = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                    (y > 0).then(|| i - w),
                    (y + 1 < h).then(|| i + w),
                ];
                if dilate {
                    grid[i] = prev[i] || neighbors.iter().flatten().any(|&n| prev[n]);
                } else {
                    grid[i] = prev[i] && neighbors.iter().all(|n| n.is_some_and(|n| prev[n]));
                }
            }
        }
    }
    grid.iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(i, _)| i as u32)
        .collect()
}
