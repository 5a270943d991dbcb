use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{InstanceMaskSet, MaskInstance, PerceptionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApMatch {
    pub prediction_id: u32,
    pub confidence: f64,
    /// Matched truth instance, or `None` for a false positive.
    pub truth_id: Option<u32>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub iou: f64,
    pub ap: f64,
    pub matches: Vec<ApMatch>,
}

/// Intersection over union of two sorted pixel lists.
pub fn iou(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Ranks predictions by descending confidence, then ascending id.
pub(crate) fn ranked(predicted: &InstanceMaskSet) -> Vec<&MaskInstance> {
    let mut order: Vec<&MaskInstance> = predicted.instances.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.instance_id.cmp(&b.instance_id))
    });
    order
}

/// Area under the ranked precision/recall accumulation.
///
/// Each prediction, in rank order, claims the unmatched truth with the highest
/// IoU at or above `iou_threshold`. Precision and recall are sampled only at
/// confidence boundaries, so tied predictions enter together. With no truth
/// instances AP is 1.0 if there are also no predictions and 0.0 otherwise.
pub fn average_precision(
    predicted: &InstanceMaskSet,
    truth: &InstanceMaskSet,
    iou_threshold: f64,
) -> Result<ApReport, PerceptionError> {
    if (predicted.width, predicted.height) != (truth.width, truth.height) {
        return Err(PerceptionError::DimensionMismatch(
            predicted.width,
            predicted.height,
            truth.width,
            truth.height,
        ));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(PerceptionError::InvalidMask(format!(
            "IoU threshold {iou_threshold} outside [0, 1]"
        )));
    }
    let order = ranked(predicted);
    let mut claimed = vec![false; truth.instances.len()];
    let mut matches = Vec::with_capacity(order.len());
    for pred in &order {
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in truth.instances.iter().enumerate() {
            if claimed[k] {
                continue;
            }
            let score = iou(&pred.pixels, &t.pixels);
            if score >= iou_threshold && score > 0.0 && best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        if let Some((k, _)) = best {
            claimed[k] = true;
        }
        matches.push(ApMatch {
            prediction_id: pred.instance_id,
            confidence: pred.confidence,
            truth_id: best.map(|(k, _)| truth.instances[k].instance_id),
            iou: best.map_or(0.0, |(_, s)| s),
        });
    }

    let n_truth = truth.instances.len();
    let ap = if n_truth == 0 {
        if order.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        let mut ap = 0.0;
        let mut tp = 0usize;
        let mut prev_recall = 0.0;
        for (i, m) in matches.iter().enumerate() {
            tp += usize::from(m.truth_id.is_some());
            let boundary = matches
                .get(i + 1)
                .is_none_or(|next| next.confidence != m.confidence);
            if boundary {
                let recall = tp as f64 / n_truth as f64;
                let precision = tp as f64 / (i + 1) as f64;
                ap += (recall - prev_recall) * precision;
                prev_recall = recall;
            }
        }
        ap
    };
    Ok(ApReport {
        iou: iou_threshold,
        ap,
        matches,
    })
}
