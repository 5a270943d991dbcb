//! Per-session state. A dedicated writer thread owns the [`Mission`] and
//! applies commands in arrival order; handlers read a shared view and the
//! append-only event log.

use std::collections::BTreeMap;
use std::sync::{mpsc, Arc, Mutex, RwLock};

use ppln_core::mission::PhaseKind;
use ppln_core::orchard::{encode_depth_png, encode_mask_png, encode_rgb_png};
use ppln_core::{
    Mission, MissionConfig, MissionError, MissionEvent, MissionReport, OrchardScene,
    ReviewDecision, TargetState,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use super::error::ApiError;
use crate::views::TargetSummary;

pub const SNAPSHOT_SCHEMA: &str = "session_snapshot/1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct LogState {
    len: usize,
    closed: bool,
}

/// Append-only mission event log with change notification for streaming readers.
#[derive(Debug)]
pub struct EventLog {
    events: Mutex<Vec<MissionEvent>>,
    state: watch::Sender<LogState>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self {
            events: Mutex::new(Vec::new()),
            state: watch::Sender::new(LogState::default()),
        }
    }
}

impl EventLog {
    pub fn push(&self, event: MissionEvent) {
        let len = {
            let mut events = self.events.lock().expect("event log poisoned");
            events.push(event);
            events.len()
        };
        self.state.send_modify(|s| s.len = len);
    }

    pub fn close(&self) {
        self.state.send_modify(|s| s.closed = true);
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.state.borrow().closed
    }

    pub fn get(&self, index: usize) -> Option<MissionEvent> {
        self.events
            .lock()
            .expect("event log poisoned")
            .get(index)
            .cloned()
    }

    pub fn snapshot(&self) -> Vec<MissionEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }

    /// Waits until the event at `index` exists, returning `None` once the log
    /// is closed without it.
    pub async fn next(&self, index: usize) -> Option<MissionEvent> {
        let mut rx = self.state.subscribe();
        loop {
            rx.borrow_and_update();
            if let Some(event) = self.get(index) {
                return Some(event);
            }
            if self.is_closed() {
                return None;
            }
            rx.changed().await.ok()?;
        }
    }

    /// Resolves once the log is closed.
    pub async fn closed(&self) {
        let mut rx = self.state.subscribe();
        let _ = rx.wait_for(|s| s.closed).await;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frames {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub depth: Vec<u8>,
    pub masks: Vec<u8>,
}

/// Read side of a session, refreshed by the writer after every command.
#[derive(Debug, Clone)]
pub struct SessionView {
    pub phase: PhaseKind,
    pub started: bool,
    pub done: bool,
    pub targets: Vec<TargetSummary>,
    pub pending: BTreeMap<u32, ReviewDecision>,
    pub report: Option<MissionReport>,
    pub error: Option<String>,
    pub frames: Option<Arc<Frames>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub id: String,
    pub seed: u64,
    pub phase: PhaseKind,
    pub started: bool,
    pub done: bool,
    pub clusters: usize,
    pub flowers: usize,
    pub targets: usize,
    pub pending_reviews: usize,
    pub events: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub schema: String,
    pub id: String,
    pub seed: u64,
    pub scene: OrchardScene,
    pub config: MissionConfig,
    pub phase: PhaseKind,
    pub pending: Vec<ReviewDecision>,
    pub targets: Vec<TargetSummary>,
    pub events: Vec<MissionEvent>,
    pub report: Option<MissionReport>,
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

enum Command {
    Perceive(Reply<()>),
    Review(ReviewDecision, Reply<TargetSummary>),
    Start(Reply<()>),
}

pub struct Session {
    pub id: String,
    pub seed: u64,
    pub scene: OrchardScene,
    pub config: MissionConfig,
    pub log: Arc<EventLog>,
    view: Arc<RwLock<SessionView>>,
    commands: Mutex<mpsc::Sender<Command>>,
}

impl Session {
    pub fn spawn(
        id: String,
        scene: OrchardScene,
        config: MissionConfig,
        seed: u64,
    ) -> Result<Arc<Self>, ApiError> {
        scene
            .validate()
            .map_err(|e| ApiError::validation(e.to_string()))?;
        let mission = Mission::new(scene.clone(), config.clone(), seed)
            .map_err(|e| ApiError::validation(e.to_string()))?;
        let view = Arc::new(RwLock::new(SessionView {
            phase: PhaseKind::Idle,
            started: false,
            done: false,
            targets: Vec::new(),
            pending: BTreeMap::new(),
            report: None,
            error: None,
            frames: None,
        }));
        let log = Arc::new(EventLog::default());
        let (tx, rx) = mpsc::channel();
        let writer = Writer {
            mission,
            view: Arc::clone(&view),
            log: Arc::clone(&log),
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || writer.run(rx))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Arc::new(Self {
            id,
            seed,
            scene,
            config,
            log,
            view,
            commands: Mutex::new(tx),
        }))
    }

    pub fn view(&self) -> SessionView {
        self.view.read().expect("session view poisoned").clone()
    }

    pub fn info(&self) -> SessionInfo {
        let v = self.view.read().expect("session view poisoned");
        SessionInfo {
            id: self.id.clone(),
            seed: self.seed,
            phase: v.phase,
            started: v.started,
            done: v.done,
            clusters: self.scene.clusters.len(),
            flowers: self.scene.flower_count(),
            targets: v.targets.len(),
            pending_reviews: v.pending.len(),
            events: self.log.len(),
            error: v.error.clone(),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let v = self.view();
        SessionSnapshot {
            schema: SNAPSHOT_SCHEMA.to_string(),
            id: self.id.clone(),
            seed: self.seed,
            scene: self.scene.clone(),
            config: self.config.clone(),
            phase: v.phase,
            pending: v.pending.into_values().collect(),
            targets: v.targets,
            events: self.log.snapshot(),
            report: v.report,
        }
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .lock()
            .expect("command channel poisoned")
            .send(make(tx))
            .map_err(|_| ApiError::internal("session writer stopped"))?;
        rx.await
            .map_err(|_| ApiError::internal("session writer stopped"))?
    }

    pub async fn perceive(&self) -> Result<(), ApiError> {
        self.call(Command::Perceive).await
    }

    pub async fn review(&self, decision: ReviewDecision) -> Result<TargetSummary, ApiError> {
        // Answer without queueing behind a running mission.
        if self.view.read().expect("session view poisoned").started {
            return Err(ApiError::invalid_state(
                "review is closed: the mission has started",
            ));
        }
        self.call(|reply| Command::Review(decision, reply)).await
    }

    /// Returns once the mission is accepted; it then runs on the writer.
    pub async fn start(&self) -> Result<(), ApiError> {
        if self.view.read().expect("session view poisoned").started {
            return Err(ApiError::invalid_state("the mission has already started"));
        }
        self.call(Command::Start).await
    }
}

struct Writer {
    mission: Mission,
    view: Arc<RwLock<SessionView>>,
    log: Arc<EventLog>,
}

impl Writer {
    fn run(mut self, commands: mpsc::Receiver<Command>) {
        while let Ok(command) = commands.recv() {
            match command {
                Command::Perceive(reply) => {
                    let _ = reply.send(self.perceive());
                }
                Command::Review(decision, reply) => {
                    let _ = reply.send(self.review(decision));
                }
                Command::Start(reply) => {
                    if let Err(e) = self.begin() {
                        let _ = reply.send(Err(e));
                        continue;
                    }
                    let _ = reply.send(Ok(()));
                    self.run_mission();
                }
            }
        }
    }

    fn set_view(&self, f: impl FnOnce(&mut SessionView)) {
        f(&mut self.view.write().expect("session view poisoned"));
    }

    fn sync_log(&self) {
        for event in &self.mission.events()[self.log.len()..] {
            self.log.push(event.clone());
        }
    }

    fn refresh_targets(&self, view: &mut SessionView) {
        let width = self.mission.frame().map_or(0, |f| f.width());
        view.targets = self
            .mission
            .targets()
            .iter()
            .map(|t| {
                let mut s = TargetSummary::new(t, width);
                s.pending = view.pending.get(&t.cluster_id).map(|d| d.decision);
                s
            })
            .collect();
        view.phase = self.mission.phase().kind();
    }

    fn perceive(&mut self) -> Result<(), ApiError> {
        if self.mission.phase().kind() != PhaseKind::Idle {
            return Err(ApiError::invalid_state(format!(
                "cannot perceive in phase {}",
                self.mission.phase()
            )));
        }
        self.mission.perceive().map_err(mission_error)?;
        self.sync_log();
        let frames = self.encode_frames()?;
        let mut view = self.view.write().expect("session view poisoned");
        view.frames = Some(Arc::new(frames));
        self.refresh_targets(&mut view);
        Ok(())
    }

    fn encode_frames(&self) -> Result<Frames, ApiError> {
        let frame = self
            .mission
            .frame()
            .ok_or_else(|| ApiError::internal("no frame after perception"))?;
        let truth = self
            .mission
            .ground_truth()
            .ok_or_else(|| ApiError::internal("no masks after perception"))?;
        let internal = |e: ppln_core::orchard::ImageError| ApiError::internal(e.to_string());
        Ok(Frames {
            width: frame.width(),
            height: frame.height(),
            rgb: encode_rgb_png(frame).map_err(internal)?,
            depth: encode_depth_png(frame).map_err(internal)?,
            masks: encode_mask_png(truth).map_err(internal)?,
        })
    }

    fn review(&mut self, decision: ReviewDecision) -> Result<TargetSummary, ApiError> {
        if self.mission.phase().kind() != PhaseKind::OperatorReview {
            return Err(ApiError::invalid_state(format!(
                "review is not open in phase {}",
                self.mission.phase()
            )));
        }
        let target = self
            .mission
            .targets()
            .iter()
            .find(|t| t.cluster_id == decision.cluster_id)
            .ok_or_else(|| {
                ApiError::not_found(format!("no target with cluster id {}", decision.cluster_id))
            })?;
        if target.state != TargetState::Candidate {
            return Err(ApiError::invalid_state(format!(
                "cluster {} is {} and cannot be reviewed",
                target.cluster_id,
                target.state.name()
            )));
        }
        let mut view = self.view.write().expect("session view poisoned");
        view.pending.insert(decision.cluster_id, decision.clone());
        self.refresh_targets(&mut view);
        Ok(view
            .targets
            .iter()
            .find(|t| t.cluster_id == decision.cluster_id)
            .cloned()
            .expect("target listed above"))
    }

    fn begin(&mut self) -> Result<(), ApiError> {
        if self.mission.phase().kind() == PhaseKind::Idle {
            self.perceive()?;
        }
        if self.mission.phase().kind() != PhaseKind::OperatorReview {
            return Err(ApiError::invalid_state(format!(
                "cannot start the mission in phase {}",
                self.mission.phase()
            )));
        }
        let pending: Vec<ReviewDecision> = self
            .view
            .read()
            .expect("session view poisoned")
            .pending
            .values()
            .cloned()
            .collect();
        self.mission.review(&pending).map_err(mission_error)?;
        self.set_view(|v| {
            v.started = true;
            v.pending.clear();
        });
        let mut view = self.view.write().expect("session view poisoned");
        self.refresh_targets(&mut view);
        Ok(())
    }

    fn run_mission(&mut self) {
        let (log, view) = (Arc::clone(&self.log), Arc::clone(&self.view));
        let result = self.mission.finish_with(&mut |event| {
            if let MissionEvent::Transition(t) = event {
                view.write().expect("session view poisoned").phase = t.to;
            }
            log.push(event.clone());
        });
        self.sync_log();
        let mut view = self.view.write().expect("session view poisoned");
        self.refresh_targets(&mut view);
        match result {
            Ok(report) => view.report = Some(report),
            Err(e) => {
                log::error!("mission failed: {e}");
                view.error = Some(e.to_string());
            }
        }
        view.done = true;
        drop(view);
        self.log.close();
    }
}

fn mission_error(e: MissionError) -> ApiError {
    match e {
        MissionError::InvalidPhase { .. } => ApiError::invalid_state(e.to_string()),
        MissionError::Perception(ppln_core::perception::PerceptionError::NotFound(_)) => {
            ApiError::not_found(e.to_string())
        }
        MissionError::InvalidConfig(_) => ApiError::validation(e.to_string()),
        _ => ApiError::internal(e.to_string()),
    }
}
