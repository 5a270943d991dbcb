use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{InstanceMaskSet, PerceptionError};
use crate::geometry::{estimate_cluster_pose, NormalParams, PointCloud, Pose6D};
use crate::orchard::RgbdFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InvalidDepth,
    /// Enough depth, but no stable approach axis could be estimated.
    DegeneratePose,
    InwardFacing,
    OutOfRange,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::InvalidDepth => "invalid_depth",
            RejectReason::DegeneratePose => "degenerate_pose",
            RejectReason::InwardFacing => "inward_facing",
            RejectReason::OutOfRange => "out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TargetState {
    Candidate,
    AutoRejected { reason: RejectReason },
    OperatorRejected { note: Option<String> },
    Approved,
    Planned,
    Sprayed,
    PlanFailed,
}

impl TargetState {
    pub fn name(&self) -> &'static str {
        match self {
            TargetState::Candidate => "candidate",
            TargetState::AutoRejected { .. } => "auto_rejected",
            TargetState::OperatorRejected { .. } => "operator_rejected",
            TargetState::Approved => "approved",
            TargetState::Planned => "planned",
            TargetState::Sprayed => "sprayed",
            TargetState::PlanFailed => "plan_failed",
        }
    }

    /// Allowed edges: candidate → {auto_rejected, operator_rejected, approved},
    /// approved → {planned, plan_failed}, planned → {sprayed, plan_failed}.
    pub fn can_become(&self, next: &TargetState) -> bool {
        use TargetState::*;
        matches!(
            (self, next),
            (
                Candidate,
                AutoRejected { .. } | OperatorRejected { .. } | Approved
            ) | (Approved, Planned | PlanFailed)
                | (Planned, Sprayed | PlanFailed)
        )
    }

    pub fn is_rejected(&self) -> bool {
        matches!(
            self,
            TargetState::AutoRejected { .. } | TargetState::OperatorRejected { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTarget {
    pub cluster_id: u32,
    pub pixels: Vec<u32>,
    /// Mask pixels that carried finite depth.
    pub valid_pixels: usize,
    /// Deprojected world-frame points, possibly downsampled.
    pub points_3d: Vec<Vector3<f64>>,
    pub pose: Option<Pose6D>,
    pub depth_median: Option<f64>,
    /// Unit vector from the cluster position toward the camera.
    pub view_direction: Option<Vector3<f64>>,
    pub state: TargetState,
}

impl ClusterTarget {
    pub fn transition(&mut self, next: TargetState) -> Result<(), PerceptionError> {
        if !self.state.can_become(&next) {
            return Err(PerceptionError::InvalidState {
                cluster_id: self.cluster_id,
                state: self.state.name().into(),
                action: "change to that state",
            });
        }
        self.state = next;
        Ok(())
    }

    /// Angle in degrees between the approach axis and the direction to the camera.
    pub fn facing_angle_deg(&self) -> Option<f64> {
        let (pose, view) = (self.pose?, self.view_direction?);
        Some(pose.z_axis().angle(&view).to_degrees())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_valid_pixels: usize,
    /// Clusters whose approach axis is further than this from the camera direction are rejected.
    pub inward_threshold_deg: f64,
    pub max_depth: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_valid_pixels: 50,
            inward_threshold_deg: 90.0,
            max_depth: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub normals: NormalParams,
    pub filter: FilterConfig,
    /// Evenly strided cap on points per cluster before normal estimation; 0 keeps all.
    pub max_points_per_cluster: usize,
    pub iou_threshold: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            normals: NormalParams::default(),
            filter: FilterConfig::default(),
            max_points_per_cluster: 4000,
            iou_threshold: 0.5,
        }
    }
}

/// Deprojects each mask instance and estimates its pose.
///
/// Normals are computed in the world frame with the camera position as the
/// viewpoint. A cluster whose pose cannot be estimated keeps `pose = None`
/// and is left to [`auto_filter`].
pub fn build_targets(
    frame: &RgbdFrame,
    masks: &InstanceMaskSet,
    config: &PerceptionConfig,
) -> Vec<ClusterTarget> {
    let camera_position = frame.camera_pose.position;
    let params = config.normals.with_viewpoint(camera_position);
    let mut instances: Vec<_> = masks.instances.iter().collect();
    instances.sort_by_key(|i| i.instance_id);
    instances
        .into_iter()
        .map(|inst| {
            let mut depths = Vec::new();
            let mut points = Vec::new();
            for &px in &inst.pixels {
                if let (Some(d), Some(p)) =
                    (frame.depth_at(px as usize), frame.world_point(px as usize))
                {
                    depths.push(d);
                    points.push(p);
                }
            }
            let valid_pixels = points.len();
            if config.max_points_per_cluster > 0 && points.len() > config.max_points_per_cluster {
                let stride = points.len().div_ceil(config.max_points_per_cluster);
                points = points.into_iter().step_by(stride).collect();
            }
            let pose = PointCloud::new(points.clone())
                .and_then(|c| c.with_cluster_ids(vec![inst.instance_id; points.len()]))
                .and_then(|c| estimate_cluster_pose(&c, inst.instance_id, &params))
                .ok();
            let view_direction =
                pose.and_then(|p| (camera_position - p.position).try_normalize(1e-12));
            ClusterTarget {
                cluster_id: inst.instance_id,
                pixels: inst.pixels.clone(),
                valid_pixels,
                points_3d: points,
                pose,
                depth_median: median(&mut depths),
                view_direction,
                state: TargetState::Candidate,
            }
        })
        .collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

/// Rejects candidates with too little depth, no pose, an inward-facing axis,
/// or a median depth beyond reach; checked in that order. Non-candidates are
/// untouched, so the filter is idempotent.
pub fn auto_filter(targets: &mut [ClusterTarget], limits: &FilterConfig) {
    for t in targets
        .iter_mut()
        .filter(|t| t.state == TargetState::Candidate)
    {
        let reason = if t.valid_pixels < limits.min_valid_pixels {
            Some(RejectReason::InvalidDepth)
        } else if t.pose.is_none() || t.view_direction.is_none() {
            Some(RejectReason::DegeneratePose)
        } else if t
            .facing_angle_deg()
            .is_some_and(|a| a > limits.inward_threshold_deg)
        {
            Some(RejectReason::InwardFacing)
        } else if t.depth_median.is_some_and(|d| d > limits.max_depth) {
            Some(RejectReason::OutOfRange)
        } else {
            None
        };
        if let Some(reason) = reason {
            t.state = TargetState::AutoRejected { reason };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub cluster_id: u32,
    pub decision: Decision,
    #[serde(default)]
    pub note: Option<String>,
}

/// Applies operator decisions. Every decision is validated before any is
/// applied, so a failing batch leaves `targets` unchanged.
pub fn apply_operator_review(
    targets: &mut [ClusterTarget],
    decisions: &[ReviewDecision],
) -> Result<(), PerceptionError> {
    for d in decisions {
        let target = targets
            .iter()
            .find(|t| t.cluster_id == d.cluster_id)
            .ok_or(PerceptionError::NotFound(d.cluster_id))?;
        if target.state != TargetState::Candidate {
            return Err(PerceptionError::InvalidState {
                cluster_id: d.cluster_id,
                state: target.state.name().into(),
                action: "review",
            });
        }
    }
    for d in decisions {
        let target = targets
            .iter_mut()
            .find(|t| t.cluster_id == d.cluster_id)
            .expect("validated above");
        if target.state != TargetState::Candidate {
            continue;
        }
        target.state = match d.decision {
            Decision::Approve => TargetState::Approved,
            Decision::Reject => TargetState::OperatorRejected {
                note: d.note.clone(),
            },
        };
    }
    Ok(())
}

/// Ends review: remaining candidates take `default`.
pub fn close_review(targets: &mut [ClusterTarget], default: Decision) {
    for t in targets
        .iter_mut()
        .filter(|t| t.state == TargetState::Candidate)
    {
        t.state = match default {
            Decision::Approve => TargetState::Approved,
            Decision::Reject => TargetState::OperatorRejected {
                note: Some("review closed without a decision".into()),
            },
        };
    }
}
