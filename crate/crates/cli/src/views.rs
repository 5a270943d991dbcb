//! Serializable projections of pipeline state shared by the CLI and the service.

use ppln_core::arm::standoff_pose;
use ppln_core::perception::ClusterTarget;
use ppln_core::seed::derive_seed;
use ppln_core::sequencing::{solve_tour, TourConfig, TourSite};
use ppln_core::{Decision, MissionConfig, Pose6D, TargetState, Tour, TourProblem};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const TARGETS_SCHEMA: &str = "targets/1";
pub const PLAN_SCHEMA: &str = "plan/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub cluster_id: u32,
    #[serde(flatten)]
    pub state: TargetState,
    pub pose: Option<Pose6D>,
    pub depth_median: Option<f64>,
    /// Angle between the approach axis and the direction to the camera.
    pub approach_angle_deg: Option<f64>,
    pub valid_pixels: usize,
    pub pixel_count: usize,
    /// `[min_u, min_v, max_u, max_v]` in pixels, inclusive.
    pub bbox: Option<[u32; 4]>,
    /// Operator decision recorded but not yet applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<Decision>,
}

impl TargetSummary {
    pub fn new(target: &ClusterTarget, width: u32) -> Self {
        Self {
            cluster_id: target.cluster_id,
            state: target.state.clone(),
            pose: target.pose,
            depth_median: target.depth_median,
            approach_angle_deg: target.facing_angle_deg(),
            valid_pixels: target.valid_pixels,
            pixel_count: target.pixels.len(),
            bbox: bbox(&target.pixels, width),
            pending: None,
        }
    }
}

fn bbox(pixels: &[u32], width: u32) -> Option<[u32; 4]> {
    if width == 0 {
        return None;
    }
    pixels.iter().fold(None, |acc, &p| {
        let (u, v) = (p % width, p / width);
        Some(match acc {
            None => [u, v, u, v],
            Some([a, b, c, d]) => [a.min(u), b.min(v), c.max(u), d.max(v)],
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetsFile {
    pub schema: String,
    pub width: u32,
    pub height: u32,
    pub targets: Vec<TargetSummary>,
}

impl TargetsFile {
    pub fn new(width: u32, height: u32, targets: &[ClusterTarget]) -> Self {
        Self {
            schema: TARGETS_SCHEMA.to_string(),
            width,
            height,
            targets: targets
                .iter()
                .map(|t| TargetSummary::new(t, width))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub schema: String,
    pub start: [f64; 3],
    pub sites: Vec<TourSite>,
    pub tour: Tour,
}

/// Orders every target that is not rejected and has a pose, visiting the
/// nozzle standoff points from the arm's start configuration.
pub fn plan_targets(
    targets: &[TargetSummary],
    config: &MissionConfig,
    seed: u64,
) -> Result<PlanFile, CliError> {
    let mut sites = Vec::new();
    for t in targets.iter().filter(|t| !t.state.is_rejected()) {
        let Some(pose) = t.pose else { continue };
        let goal = standoff_pose(&pose, config.sprayer.standoff)
            .map_err(|e| CliError::Domain(e.to_string()))?;
        sites.push(TourSite {
            cluster_id: t.cluster_id,
            position: goal.position,
        });
    }
    let start = config.arm.forward_kinematics(&config.start).position;
    let problem = TourProblem::new(start, sites).map_err(|e| CliError::Domain(e.to_string()))?;
    let tour_config = TourConfig {
        seed: derive_seed(seed, "tour", 0),
        ..config.sequencing
    };
    let tour = solve_tour(&problem, &tour_config);
    Ok(PlanFile {
        schema: PLAN_SCHEMA.to_string(),
        start: start.into(),
        sites: problem.sites,
        tour,
    })
}
