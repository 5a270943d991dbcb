//! Mission state machine: perceive, review, sequence, then plan, execute,
//! and spray each approved cluster once.
//!
//! The clock is simulated. Perception, planning, and spraying advance it by
//! [`StageBudget`] values; execution uses either its budget or the planned
//! trajectory's duration. A cluster whose motion plan fails is dropped from the
//! target list and the mission moves on.

mod fruit;
mod phase;

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fruit::{
    fruit_set_metrics, percent_one_decimal, simulate_fruit_set, FruitSetMetrics, FruitSetModel,
};
pub use phase::{is_legal, validate_trace, write_trace, Phase, PhaseKind, Transition, TRANSITIONS};

use crate::arm::{plan_motion, standoff_pose, ArmModel, JointConfig, PlannerConfig, HOME};
use crate::geometry::{CameraModel, GeometryError, Pose6D};
use crate::orchard::{
    default_camera_pose, render_frame, GroundTruthMasks, OrchardScene, RenderConfig, RgbdFrame,
    SceneError,
};
use crate::perception::{
    apply_operator_review, auto_filter, build_targets, close_review, ClusterTarget, Decision,
    InstanceMaskSet, OracleSegmenter, PerceptionConfig, PerceptionError, RejectReason,
    ReviewDecision, Segmenter, TargetState,
};
use crate::seed::derive_seed;
use crate::sequencing::{solve_tour, SequencingError, Tour, TourConfig, TourProblem, TourSite};
use crate::sprayer::{
    emitted_volume, simulate_spray, tick_tank, SprayEvent, SprayerConfig, SprayerError, TankEvent,
    TankEventKind, TankState,
};

pub const REPORT_SCHEMA: &str = "mission_report/1";

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid mission config: {0}")]
    InvalidConfig(String),
    #[error("cannot {action} during {phase}")]
    InvalidPhase { action: &'static str, phase: String },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Sprayer(#[from] SprayerError),
    #[error(transparent)]
    Sequencing(#[from] SequencingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Seconds charged per cluster for each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageBudget {
    pub segmentation: f64,
    pub pose_estimation: f64,
    pub plan: f64,
    pub execute: f64,
    pub spray: f64,
}

impl Default for StageBudget {
    fn default() -> Self {
        Self {
            segmentation: 0.4,
            pose_estimation: 0.8,
            plan: 0.1,
            execute: 3.2,
            spray: 2.0,
        }
    }
}

impl StageBudget {
    pub fn validate(&self) -> Result<(), MissionError> {
        let all = [
            self.segmentation,
            self.pose_estimation,
            self.plan,
            self.execute,
            self.spray,
        ];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(MissionError::InvalidConfig(format!(
                "stage budgets must be non-negative, got {self:?}"
            )))
        }
    }

    pub fn total(&self) -> f64 {
        self.segmentation + self.pose_estimation + self.plan + self.execute + self.spray
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecuteTiming {
    /// Charge `StageBudget::execute`.
    Budget,
    /// Charge the planned trajectory's duration.
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Dilates (positive) or erodes (negative) the ground-truth masks.
    pub boundary_px: i32,
    pub confidence_noise: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            boundary_px: 0,
            confidence_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub camera: CameraModel,
    pub camera_pose: Pose6D,
    pub render: RenderConfig,
    pub segmenter: SegmenterConfig,
    pub perception: PerceptionConfig,
    pub sequencing: TourConfig,
    pub arm: ArmModel,
    pub start: JointConfig,
    pub planner: PlannerConfig,
    pub sprayer: SprayerConfig,
    pub tank: TankState,
    pub budget: StageBudget,
    pub execute_timing: ExecuteTiming,
    pub fruit_set: FruitSetModel,
    /// Applied to clusters the operator left undecided when review closes.
    pub review_default: Decision,
    /// Re-solve the visiting order over the remaining clusters after a failed plan.
    pub resequence_on_failure: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::depth_sensor(),
            camera_pose: default_camera_pose(),
            render: RenderConfig::default(),
            segmenter: SegmenterConfig::default(),
            perception: PerceptionConfig::default(),
            sequencing: TourConfig::default(),
            arm: ArmModel::ur5e(),
            start: HOME,
            planner: PlannerConfig::default(),
            sprayer: SprayerConfig::default(),
            tank: TankState::default(),
            budget: StageBudget::default(),
            execute_timing: ExecuteTiming::Budget,
            fruit_set: FruitSetModel::default(),
            review_default: Decision::Approve,
            resequence_on_failure: false,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        self.camera.validate()?;
        self.sprayer.validate()?;
        self.tank.validate()?;
        self.budget.validate()?;
        self.fruit_set.validate()?;
        self.arm
            .validate()
            .map_err(|e| MissionError::InvalidConfig(e.to_string()))?;
        if !self.camera_pose.is_finite() {
            return Err(MissionError::InvalidConfig(
                "camera pose is not finite".into(),
            ));
        }
        if !self.arm.within_limits(&self.start) {
            return Err(MissionError::InvalidConfig(
                "start configuration is outside the joint limits".into(),
            ));
        }
        let per_spray = emitted_volume(&self.sprayer, self.sprayer.spray_duration)?;
        if per_spray > self.tank.capacity {
            return Err(MissionError::InvalidConfig(format!(
                "one spray emits {per_spray:.3} ml but the tank holds {:.3} ml",
                self.tank.capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MissionEvent {
    Transition(Transition),
    Spray(SprayEvent),
    Tank(TankEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Sprayed,
    PlanFailed { reason: String },
    AutoRejected { reason: RejectReason },
    OperatorRejected { note: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub cluster_id: u32,
    #[serde(flatten)]
    pub outcome: Outcome,
    pub pose: Option<Pose6D>,
    pub depth_median: Option<f64>,
    /// Share of the cluster's flowers inside the spray cone and unoccluded.
    pub covered_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowerOutcome {
    pub flower_id: u32,
    pub cluster_id: u32,
    /// Suspension deposited over the whole mission, ml.
    pub dose: f64,
    /// Drawn only for flowers of sprayed clusters.
    pub fruit_set: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cluster_id: u32,
    pub sprayed: bool,
    pub segmentation: f64,
    pub pose_estimation: f64,
    pub plan: f64,
    pub execute: f64,
    pub spray: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTimeReport {
    /// Every cluster that reached planning, in visiting order.
    pub per_cluster: Vec<CycleRecord>,
    /// Per-stage means over sprayed clusters.
    pub stage_means: Option<StageBudget>,
    /// Sum of `stage_means`.
    pub mean_total: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub detected: usize,
    pub sprayed: usize,
    pub plan_failed: usize,
    pub auto_rejected: usize,
    pub operator_rejected: usize,
}

impl OutcomeCounts {
    pub fn reconciles(&self) -> bool {
        self.sprayed + self.plan_failed + self.auto_rejected + self.operator_rejected
            == self.detected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub schema: String,
    pub seed: u64,
    pub scene_seed: u64,
    pub scene_clusters: usize,
    pub scene_flowers: usize,
    pub pollen_concentration: f64,
    pub counts: OutcomeCounts,
    pub clusters: Vec<ClusterOutcome>,
    pub flowers: Vec<FlowerOutcome>,
    pub cycle_time: CycleTimeReport,
    /// `None` when no flower was sprayed.
    pub fruit_set: Option<FruitSetMetrics>,
    pub tour: Option<Tour>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retours: Vec<Tour>,
    pub tank_events: Vec<TankEvent>,
    pub clock: f64,
}

impl MissionReport {
    pub fn to_json(&self) -> Result<String, MissionError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MissionError> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(MissionError::InvalidConfig(format!(
                "unsupported report schema {:?}",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn outcome(&self, cluster_id: u32) -> Option<&Outcome> {
        self.clusters
            .iter()
            .find(|c| c.cluster_id == cluster_id)
            .map(|c| &c.outcome)
    }
}

/// A mission over one camera station.
///
/// Drive it with [`Mission::perceive`], optional [`Mission::review`] calls,
/// then [`Mission::finish`]; or use [`run_mission`] for a headless run.
#[derive(Debug, Clone)]
pub struct Mission {
    scene: OrchardScene,
    config: MissionConfig,
    seed: u64,
    phase: Phase,
    clock: f64,
    frame: Option<RgbdFrame>,
    truth: Option<GroundTruthMasks>,
    masks: Option<InstanceMaskSet>,
    targets: Vec<ClusterTarget>,
    tank: TankState,
    tank_ticked_at: f64,
    arm_q: JointConfig,
    tours: Vec<Tour>,
    events: Vec<MissionEvent>,
    cycles: Vec<CycleRecord>,
    covered: BTreeMap<u32, f64>,
    plan_failures: BTreeMap<u32, String>,
    doses: BTreeMap<u32, f64>,
    tank_events: Vec<TankEvent>,
    report: Option<MissionReport>,
}

impl Mission {
    pub fn new(
        scene: OrchardScene,
        config: MissionConfig,
        seed: u64,
    ) -> Result<Self, MissionError> {
        scene.validate()?;
        config.validate()?;
        Ok(Self {
            tank: config.tank.clone(),
            arm_q: config.start,
            scene,
            config,
            seed,
            phase: Phase::Idle,
            clock: 0.0,
            frame: None,
            truth: None,
            masks: None,
            targets: Vec::new(),
            tank_ticked_at: 0.0,
            tours: Vec::new(),
            events: Vec::new(),
            cycles: Vec::new(),
            covered: BTreeMap::new(),
            plan_failures: BTreeMap::new(),
            doses: BTreeMap::new(),
            tank_events: Vec::new(),
            report: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn scene(&self) -> &OrchardScene {
        &self.scene
    }

    pub fn config(&self) -> &MissionConfig {
        &self.config
    }

    pub fn frame(&self) -> Option<&RgbdFrame> {
        self.frame.as_ref()
    }

    pub fn ground_truth(&self) -> Option<&GroundTruthMasks> {
        self.truth.as_ref()
    }

    pub fn masks(&self) -> Option<&InstanceMaskSet> {
        self.masks.as_ref()
    }

    pub fn targets(&self) -> &[ClusterTarget] {
        &self.targets
    }

    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    pub fn report(&self) -> Option<&MissionReport> {
        self.report.as_ref()
    }

    pub fn trace(&self) -> Vec<Transition> {
        self.events
            .iter()
            .filter_map(|e| match e {
                MissionEvent::Transition(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }

    fn emit(&mut self, event: MissionEvent, observer: &mut dyn FnMut(&MissionEvent)) {
        observer(&event);
        self.events.push(event);
    }

    fn enter(&mut self, to: Phase, observer: &mut dyn FnMut(&MissionEvent)) {
        assert!(
            is_legal(self.phase, to),
            "illegal transition {} -> {to}",
            self.phase
        );
        let tr = Transition::new(self.clock, self.phase, to);
        self.phase = to;
        self.emit(MissionEvent::Transition(tr), observer);
    }

    /// Renders the frame and segments it with ground-truth masks.
    pub fn perceive(&mut self) -> Result<(), MissionError> {
        self.perceive_observed(None, &mut |_| {})
    }

    /// Like [`Mission::perceive`] with masks from `segmenter`.
    pub fn perceive_with(&mut self, segmenter: &dyn Segmenter) -> Result<(), MissionError> {
        self.perceive_observed(Some(segmenter), &mut |_| {})
    }

    fn perceive_observed(
        &mut self,
        segmenter: Option<&dyn Segmenter>,
        observer: &mut dyn FnMut(&MissionEvent),
    ) -> Result<(), MissionError> {
        if self.phase != Phase::Idle {
            return Err(MissionError::InvalidPhase {
                action: "perceive",
                phase: self.phase.to_string(),
            });
        }
        let cfg = &self.config;
        let (frame, truth) = render_frame(
            &self.scene,
            &cfg.camera,
            &cfg.camera_pose,
            &cfg.render,
            derive_seed(self.seed, "render", 0),
        );
        let masks = match segmenter {
            Some(s) => s.segment(&frame)?,
            None => OracleSegmenter {
                truth: truth.clone(),
                boundary_px: cfg.segmenter.boundary_px,
                confidence_noise: cfg.segmenter.confidence_noise,
                seed: derive_seed(self.seed, "segment", 0),
            }
            .segment(&frame)?,
        };
        let n = masks.instances.len() as f64;
        self.enter(Phase::AcquireFrame, observer);
        self.enter(Phase::Segment, observer);
        self.clock += self.config.budget.segmentation * n;
        self.enter(Phase::EstimatePoses, observer);
        let mut targets = build_targets(&frame, &masks, &self.config.perception);
        self.clock += self.config.budget.pose_estimation * n;
        self.enter(Phase::AutoFilter, observer);
        auto_filter(&mut targets, &self.config.perception.filter);
        self.enter(Phase::OperatorReview, observer);
        self.frame = Some(frame);
        self.truth = Some(truth);
        self.masks = Some(masks);
        self.targets = targets;
        Ok(())
    }

    /// Applies operator decisions; only valid while review is open.
    pub fn review(&mut self, decisions: &[ReviewDecision]) -> Result<(), MissionError> {
        if self.phase != Phase::OperatorReview {
            return Err(MissionError::InvalidPhase {
                action: "review targets",
                phase: self.phase.to_string(),
            });
        }
        apply_operator_review(&mut self.targets, decisions)?;
        Ok(())
    }

    /// Closes review and runs the mission to completion.
    pub fn finish(&mut self) -> Result<MissionReport, MissionError> {
        self.finish_with(&mut |_| {})
    }

    /// Like [`Mission::finish`], passing each new event to `observer` as it happens.
    pub fn finish_with(
        &mut self,
        observer: &mut dyn FnMut(&MissionEvent),
    ) -> Result<MissionReport, MissionError> {
        if self.phase == Phase::Idle {
            self.perceive_observed(None, observer)?;
        }
        if self.phase != Phase::OperatorReview {
            return Err(MissionError::InvalidPhase {
                action: "start the mission",
                phase: self.phase.to_string(),
            });
        }
        close_review(&mut self.targets, self.config.review_default);
        self.enter(Phase::SequenceTargets, observer);
        let start = self.config.arm.forward_kinematics(&self.arm_q).position;
        let approved: Vec<u32> = self
            .targets
            .iter()
            .filter(|t| t.state == TargetState::Approved)
            .map(|t| t.cluster_id)
            .collect();
        let mut queue: VecDeque<u32> = self.sequence(start, &approved)?.into();

        while let Some(cluster_id) = queue.pop_front() {
            let index = self.target_index(cluster_id);
            self.enter(Phase::PlanMotion(cluster_id), observer);
            let budget = self.config.budget;
            self.clock += budget.plan;
            let mut record = CycleRecord {
                cluster_id,
                sprayed: false,
                segmentation: budget.segmentation,
                pose_estimation: budget.pose_estimation,
                plan: budget.plan,
                execute: 0.0,
                spray: 0.0,
                total: 0.0,
            };
            match self.plan_for(index) {
                Err(reason) => {
                    self.targets[index].transition(TargetState::PlanFailed)?;
                    self.plan_failures.insert(cluster_id, reason);
                    self.enter(Phase::UpdateTargets, observer);
                    record.total = record.segmentation + record.pose_estimation + record.plan;
                    self.cycles.push(record);
                    if self.config.resequence_on_failure && !queue.is_empty() {
                        self.enter(Phase::SequenceTargets, observer);
                        let here = self.config.arm.forward_kinematics(&self.arm_q).position;
                        let remaining: Vec<u32> = queue.drain(..).collect();
                        queue = self.sequence(here, &remaining)?.into();
                    }
                }
                Ok(trajectory) => {
                    self.targets[index].transition(TargetState::Planned)?;
                    self.enter(Phase::Execute(cluster_id), observer);
                    record.execute = match self.config.execute_timing {
                        ExecuteTiming::Budget => budget.execute,
                        ExecuteTiming::Trajectory => trajectory.duration,
                    };
                    self.clock += record.execute;
                    if let Some(q) = trajectory.final_config() {
                        self.arm_q = q;
                    }
                    self.enter(Phase::Spray(cluster_id), observer);
                    self.spray(cluster_id, observer)?;
                    record.spray = budget.spray;
                    self.clock += budget.spray;
                    self.targets[index].transition(TargetState::Sprayed)?;
                    self.enter(Phase::UpdateTargets, observer);
                    record.sprayed = true;
                    record.total = record.segmentation
                        + record.pose_estimation
                        + record.plan
                        + record.execute
                        + record.spray;
                    self.cycles.push(record);
                }
            }
        }
        self.tick_tank_to_clock(observer)?;
        self.enter(Phase::Complete, observer);
        let report = self.build_report()?;
        self.report = Some(report.clone());
        Ok(report)
    }

    fn target_index(&self, cluster_id: u32) -> usize {
        self.targets
            .iter()
            .position(|t| t.cluster_id == cluster_id)
            .expect("sequenced clusters come from the target list")
    }

    fn nozzle_goal(&self, index: usize) -> Result<Pose6D, String> {
        let pose = self.targets[index]
            .pose
            .ok_or_else(|| "cluster has no pose".to_string())?;
        standoff_pose(&pose, self.config.sprayer.standoff).map_err(|e| e.to_string())
    }

    fn sequence(
        &mut self,
        start: nalgebra::Vector3<f64>,
        clusters: &[u32],
    ) -> Result<Vec<u32>, MissionError> {
        let mut sites = Vec::with_capacity(clusters.len());
        for &cluster_id in clusters {
            let goal = self
                .nozzle_goal(self.target_index(cluster_id))
                .map_err(MissionError::InvalidConfig)?;
            sites.push(TourSite {
                cluster_id,
                position: goal.position,
            });
        }
        let problem = TourProblem::new(start, sites)?;
        let config = TourConfig {
            seed: derive_seed(self.seed, "tour", self.tours.len() as u64),
            ..self.config.sequencing
        };
        let tour = solve_tour(&problem, &config);
        let order = tour.order.clone();
        self.tours.push(tour);
        Ok(order)
    }

    fn plan_for(&self, index: usize) -> Result<crate::arm::Trajectory, String> {
        let goal = self.nozzle_goal(index)?;
        let config = PlannerConfig {
            seed: derive_seed(self.seed, "plan", u64::from(self.targets[index].cluster_id)),
            ..self.config.planner
        };
        plan_motion(
            &self.config.arm,
            &self.arm_q,
            &goal,
            &self.scene.obstacles,
            &config,
        )
        .map_err(|e| e.to_string())
    }

    fn tick_tank_to_clock(
        &mut self,
        observer: &mut dyn FnMut(&MissionEvent),
    ) -> Result<(), MissionError> {
        let (tank, due) = tick_tank(&self.tank, self.clock - self.tank_ticked_at)?;
        self.tank_ticked_at = self.clock;
        self.tank = tank;
        if due {
            self.replace_tank(TankEventKind::Scheduled, observer);
        }
        Ok(())
    }

    fn replace_tank(&mut self, kind: TankEventKind, observer: &mut dyn FnMut(&MissionEvent)) {
        let event = TankEvent {
            t: self.clock,
            kind,
            discarded: self.tank.suspension_volume,
            age: self.tank.age_since_mix,
        };
        self.tank = self.tank.replaced();
        self.tank_events.push(event.clone());
        self.emit(MissionEvent::Tank(event), observer);
    }

    fn spray(
        &mut self,
        cluster_id: u32,
        observer: &mut dyn FnMut(&MissionEvent),
    ) -> Result<(), MissionError> {
        self.tick_tank_to_clock(observer)?;
        let needed = emitted_volume(&self.config.sprayer, self.config.sprayer.spray_duration)?;
        if self.tank.suspension_volume < needed {
            self.replace_tank(TankEventKind::Empty, observer);
        }
        let nozzle = self.config.arm.forward_kinematics(&self.arm_q);
        let seed = derive_seed(self.seed, "spray", u64::from(cluster_id));
        let (mut event, tank) =
            simulate_spray(&self.scene, &nozzle, &self.config.sprayer, &self.tank, seed)?;
        self.tank = tank;
        event.cluster_id = Some(cluster_id);
        for (&id, &dose) in &event.doses {
            *self.doses.entry(id).or_insert(0.0) += dose;
        }
        if let Some(cluster) = self.scene.cluster(cluster_id) {
            let ids: Vec<u32> = cluster.flowers.iter().map(|f| f.id).collect();
            self.covered
                .insert(cluster_id, event.covered_fraction(&ids));
        }
        self.emit(MissionEvent::Spray(event), observer);
        Ok(())
    }

    fn build_report(&self) -> Result<MissionReport, MissionError> {
        let mut counts = OutcomeCounts {
            detected: self.targets.len(),
            ..OutcomeCounts::default()
        };
        let mut clusters = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            let outcome = match &t.state {
                TargetState::Sprayed => {
                    counts.sprayed += 1;
                    Outcome::Sprayed
                }
                TargetState::PlanFailed => {
                    counts.plan_failed += 1;
                    Outcome::PlanFailed {
                        reason: self
                            .plan_failures
                            .get(&t.cluster_id)
                            .cloned()
                            .unwrap_or_default(),
                    }
                }
                TargetState::AutoRejected { reason } => {
                    counts.auto_rejected += 1;
                    Outcome::AutoRejected { reason: *reason }
                }
                TargetState::OperatorRejected { note } => {
                    counts.operator_rejected += 1;
                    Outcome::OperatorRejected { note: note.clone() }
                }
                other => {
                    return Err(MissionError::InvalidPhase {
                        action: "report",
                        phase: format!("cluster {} is {}", t.cluster_id, other.name()),
                    })
                }
            };
            clusters.push(ClusterOutcome {
                cluster_id: t.cluster_id,
                outcome,
                pose: t.pose,
                depth_median: t.depth_median,
                covered_fraction: self.covered.get(&t.cluster_id).copied(),
            });
        }
        clusters.sort_by_key(|c| c.cluster_id);

        let sprayed: Vec<u32> = clusters
            .iter()
            .filter(|c| c.outcome == Outcome::Sprayed)
            .map(|c| c.cluster_id)
            .collect();
        let mut effective = BTreeMap::new();
        for (cluster, flower) in self.scene.flowers() {
            if sprayed.binary_search(&cluster.id).is_ok() {
                let dose = self.doses.get(&flower.id).copied().unwrap_or(0.0);
                effective.insert(flower.id, if flower.receptive { dose } else { 0.0 });
            }
        }
        let draws = simulate_fruit_set(
            &effective,
            self.tank.pollen_concentration,
            &self.config.fruit_set,
            derive_seed(self.seed, "fruit_set", 0),
        )?;
        let flowers: Vec<FlowerOutcome> = self
            .scene
            .flowers()
            .map(|(cluster, flower)| FlowerOutcome {
                flower_id: flower.id,
                cluster_id: cluster.id,
                dose: self.doses.get(&flower.id).copied().unwrap_or(0.0),
                fruit_set: draws.get(&flower.id).copied(),
            })
            .collect();
        let pairs: Vec<(u32, bool)> = flowers
            .iter()
            .filter_map(|f| f.fruit_set.map(|s| (f.cluster_id, s)))
            .collect();
        let fruit_set = match fruit_set_metrics(&pairs) {
            Ok(m) => Some(m),
            Err(MissionError::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };

        Ok(MissionReport {
            schema: REPORT_SCHEMA.to_string(),
            seed: self.seed,
            scene_seed: self.scene.rng_seed,
            scene_clusters: self.scene.clusters.len(),
            scene_flowers: self.scene.flower_count(),
            pollen_concentration: self.tank.pollen_concentration,
            counts,
            clusters,
            flowers,
            cycle_time: cycle_summary(&self.cycles),
            fruit_set,
            tour: self.tours.first().cloned(),
            retours: self.tours.iter().skip(1).cloned().collect(),
            tank_events: self.tank_events.clone(),
            clock: self.clock,
        })
    }

    pub fn write_events<W: Write>(&self, mut out: W) -> Result<(), MissionError> {
        for e in &self.events {
            writeln!(out, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }
}

fn cycle_summary(records: &[CycleRecord]) -> CycleTimeReport {
    let sprayed: Vec<&CycleRecord> = records.iter().filter(|r| r.sprayed).collect();
    let stage_means = (!sprayed.is_empty()).then(|| {
        let n = sprayed.len() as f64;
        let mean = |f: fn(&CycleRecord) -> f64| sprayed.iter().map(|r| f(r)).sum::<f64>() / n;
        StageBudget {
            segmentation: mean(|r| r.segmentation),
            pose_estimation: mean(|r| r.pose_estimation),
            plan: mean(|r| r.plan),
            execute: mean(|r| r.execute),
            spray: mean(|r| r.spray),
        }
    });
    CycleTimeReport {
        per_cluster: records.to_vec(),
        mean_total: stage_means.map(|m| m.total()),
        stage_means,
    }
}

/// Headless run: perceive, apply `decisions`, close review with the
/// configured default, and run to completion.
pub fn run_mission(
    scene: &OrchardScene,
    config: &MissionConfig,
    decisions: &[ReviewDecision],
    seed: u64,
) -> Result<(MissionReport, Vec<Transition>), MissionError> {
    let mut mission = Mission::new(scene.clone(), config.clone(), seed)?;
    mission.perceive()?;
    mission.review(decisions)?;
    let report = mission.finish()?;
    Ok((report, mission.trace()))
}
