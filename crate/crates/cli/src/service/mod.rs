//! HTTP+JSON service with a server-sent event stream per mission.

mod error;
mod session;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use ppln_core::mission::PhaseKind;
use ppln_core::seed::derive_seed;
use ppln_core::{
    generate_scene, Decision, MissionConfig, MissionEvent, OrchardScene, ReviewDecision,
    SceneConfig,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::{ApiError, ErrorBody};
pub use session::{EventLog, SessionInfo, SessionSnapshot, SessionView, SNAPSHOT_SCHEMA};

use crate::config::AppConfig;
use crate::views::TargetSummary;
use crate::CliError;
use session::Session;

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Defaults for sessions created without an explicit config.
    pub defaults: AppConfig,
    pub ui_dir: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    options: ServiceOptions,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(options: ServiceOptions) -> Self {
        Self {
            inner: Arc::new(Inner {
                options,
                sessions: RwLock::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

pub fn router(options: ServiceOptions) -> Router {
    let ui_dir = options.ui_dir.clone();
    let app = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/perceive", post(perceive))
        .route("/sessions/{id}/targets", get(targets))
        .route("/sessions/{id}/targets/{cid}/review", post(review))
        .route("/sessions/{id}/mission/start", post(start_mission))
        .route("/sessions/{id}/mission/events", get(events))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/frame", get(frame))
        .route(
            "/sessions/{id}/snapshot",
            get(snapshot).post(persist_snapshot),
        )
        .with_state(AppState::new(options));
    match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir)),
        None => app,
    }
}

/// Binds `host:port` and serves until the process is stopped.
pub fn serve(host: &str, port: u16, options: ServiceOptions) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Domain(e.to_string()))?;
    runtime.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Domain(format!("bind {addr}: {e}")))?;
        log::info!("listening on http://{addr}");
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(options))
            .await
            .map_err(|e| CliError::Domain(e.to_string()))
    })
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Explicit scene; otherwise one is generated.
    pub scene: Option<OrchardScene>,
    pub scene_config: Option<SceneConfig>,
    pub scene_seed: Option<u64>,
    pub seed: u64,
    pub config: Option<MissionConfig>,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let defaults = &state.inner.options.defaults;
    let config = req.config.unwrap_or_else(|| defaults.mission.clone());
    let scene = match req.scene {
        Some(scene) => scene,
        None => {
            let scene_config = req.scene_config.as_ref().unwrap_or(&defaults.scene);
            let scene_seed = req
                .scene_seed
                .unwrap_or_else(|| derive_seed(req.seed, "scene", 0));
            tokio::task::spawn_blocking({
                let scene_config = scene_config.clone();
                move || generate_scene(&scene_config, scene_seed)
            })
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(|e| ApiError::validation(e.to_string()))?
        }
    };
    let id = format!("s{}", state.inner.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session::spawn(id.clone(), scene, config, req.seed)?;
    let info = session.info();
    state
        .inner
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(id, session);
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionInfo>> {
    let sessions = state.inner.sessions.read().expect("session table poisoned");
    Json(sessions.values().map(|s| s.info()).collect())
}

async fn session_info(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(state.session(&id)?.info()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetsView {
    pub session_id: String,
    pub phase: PhaseKind,
    pub review_open: bool,
    pub targets: Vec<TargetSummary>,
}

fn targets_view(session: &Session) -> TargetsView {
    let v = session.view();
    TargetsView {
        session_id: session.id.clone(),
        phase: v.phase,
        review_open: v.phase == PhaseKind::OperatorReview && !v.started,
        targets: v.targets,
    }
}

async fn perceive(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TargetsView>, ApiError> {
    let session = state.session(&id)?;
    session.perceive().await?;
    Ok(Json(targets_view(&session)))
}

async fn targets(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TargetsView>, ApiError> {
    let session = state.session(&id)?;
    Ok(Json(targets_view(&session)))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewBody {
    pub decision: Decision,
    #[serde(default)]
    pub note: Option<String>,
}

async fn review(
    State(state): State<AppState>,
    Path((id, cid)): Path<(String, String)>,
    body: Result<Json<ReviewBody>, JsonRejection>,
) -> Result<Json<TargetSummary>, ApiError> {
    let session = state.session(&id)?;
    let cluster_id: u32 = cid
        .parse()
        .map_err(|_| ApiError::not_found(format!("no target with cluster id {cid}")))?;
    let Json(body) = body?;
    let summary = session
        .review(ReviewDecision {
            cluster_id,
            decision: body.decision,
            note: body.note,
        })
        .await?;
    Ok(Json(summary))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct StartQuery {
    #[serde(default)]
    pub wait: bool,
}

async fn start_mission(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<StartQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let session = state.session(&id)?;
    session.start().await?;
    if query.wait {
        session.log.closed().await;
        return report_response(&session);
    }
    Ok((StatusCode::ACCEPTED, Json(session.info())).into_response())
}

fn report_response(session: &Session) -> Result<Response, ApiError> {
    let view = session.view();
    if let Some(error) = view.error {
        return Err(ApiError::internal(format!("mission failed: {error}")));
    }
    let report = view
        .report
        .ok_or_else(|| ApiError::invalid_state("the mission has not completed"))?;
    let mut text = report
        .to_json()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    text.push('\n');
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn report(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    report_response(&session)
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EventsQuery {
    /// Index of the first event to send.
    pub cursor: Option<usize>,
}

fn event_name(event: &MissionEvent) -> &'static str {
    match event {
        MissionEvent::Transition(_) => "transition",
        MissionEvent::Spray(_) => "spray",
        MissionEvent::Tank(_) => "tank",
    }
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let Query(query) = query?;
    let session = state.session(&id)?;
    let resume = headers
        .get("last-event-id")
        .map(|v| v.to_str().ok().and_then(|s| s.trim().parse::<usize>().ok()))
        .map(|v| {
            v.map(|i| i + 1)
                .ok_or_else(|| ApiError::validation("Last-Event-ID must be an event index"))
        })
        .transpose()?;
    let cursor = query.cursor.or(resume).unwrap_or(0);
    let log = Arc::clone(&session.log);
    let stream = stream::unfold((log, cursor), |(log, index)| async move {
        let event = log.next(index).await?;
        let data = serde_json::to_string(&event).expect("mission events serialize");
        let sse = Event::default()
            .id(index.to_string())
            .event(event_name(&event))
            .data(data);
        Some((Ok(sse), (log, index + 1)))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FrameQuery {
    pub kind: Option<String>,
}

async fn frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<FrameQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let session = state.session(&id)?;
    let frames = session
        .view()
        .frames
        .ok_or_else(|| ApiError::invalid_state("no frame before perception"))?;
    let bytes = match query.kind.as_deref().unwrap_or("rgb") {
        "rgb" => frames.rgb.clone(),
        "depth" => frames.depth.clone(),
        "masks" => frames.masks.clone(),
        other => {
            return Err(ApiError::validation(format!(
                "unknown frame kind {other:?}; expected rgb, depth, or masks"
            )))
        }
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn snapshot(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(state.session(&id)?.snapshot()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedSnapshot {
    pub path: String,
}

async fn persist_snapshot(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<PersistedSnapshot>, ApiError> {
    let session = state.session(&id)?;
    let dir = state
        .inner
        .options
        .snapshot_dir
        .clone()
        .ok_or_else(|| ApiError::invalid_state("no snapshot directory configured"))?;
    let text = serde_json::to_string_pretty(&session.snapshot())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let path = dir.join(format!("{id}.json"));
    tokio::task::spawn_blocking({
        let path = path.clone();
        move || std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&path, text))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    Ok(Json(PersistedSnapshot {
        path: path.display().to_string(),
    }))
}
