use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use ppln_cli::service::{router, ServiceOptions};
use ppln_core::mission::{Outcome, PhaseKind};
use ppln_core::{generate_scene, MissionReport, OrchardScene, SceneConfig, Transition};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(ServiceOptions::default())
}

fn small_scene(seed: u64) -> OrchardScene {
    let config = SceneConfig {
        cluster_count: 5,
        total_flowers: Some(20),
        ..SceneConfig::benchmark()
    };
    generate_scene(&config, seed).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (
        status,
        axum::body::to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap()
            .to_vec(),
    )
}

async fn call_json(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

async fn create(app: &Router, scene: &OrchardScene, seed: u64) -> String {
    let (status, body) = call_json(
        app,
        "POST",
        "/sessions",
        Some(json!({ "scene": scene, "seed": seed })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

#[derive(Debug, PartialEq)]
struct SseEvent {
    id: usize,
    event: String,
    data: String,
}

fn parse_sse(text: &str) -> Vec<SseEvent> {
    let mut out = Vec::new();
    for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let (mut id, mut event, mut data) = (None, None, None);
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("id:") {
                id = Some(v.trim().parse().unwrap());
            } else if let Some(v) = line.strip_prefix("event:") {
                event = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("data:") {
                data = Some(v.trim_start().to_string());
            }
        }
        if let (Some(id), Some(event), Some(data)) = (id, event, data) {
            out.push(SseEvent { id, event, data });
        }
    }
    out
}

async fn read_events(app: &Router, id: &str, last_event_id: Option<usize>) -> Vec<SseEvent> {
    let mut req = Request::get(format!("/sessions/{id}/mission/events"));
    if let Some(last) = last_event_id {
        req = req.header("last-event-id", last.to_string());
    }
    let resp = app
        .clone()
        .oneshot(req.body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "text/event-stream");
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    parse_sse(std::str::from_utf8(&bytes).unwrap())
}

#[tokio::test]
async fn rejected_cluster_is_never_planned() {
    let app = app();
    let id = create(&app, &small_scene(4), 11).await;
    let (status, targets) =
        call_json(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(targets["phase"], "operator_review");
    assert_eq!(targets["review_open"], true);
    assert!(targets["targets"]
        .as_array()
        .unwrap()
        .iter()
        .any(|t| t["cluster_id"] == 3));

    let uri = format!("/sessions/{id}/targets/3/review");
    let (status, target) = call_json(
        &app,
        "POST",
        &uri,
        Some(json!({"decision": "reject", "note": "near post"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{target}");
    assert_eq!(target["pending"], "reject");
    assert_eq!(target["state"], "candidate");

    let (status, bytes) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/mission/start?wait=true"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let report = MissionReport::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(
        report.outcome(3),
        Some(&Outcome::OperatorRejected {
            note: Some("near post".into())
        })
    );
    assert!(!report.tour.unwrap().order.contains(&3));

    let events = read_events(&app, &id, None).await;
    let planned: Vec<u32> = events
        .iter()
        .filter(|e| e.event == "transition")
        .map(|e| serde_json::from_str::<Transition>(&e.data).unwrap())
        .filter(|t| t.to == PhaseKind::PlanMotion)
        .filter_map(|t| t.cluster_id)
        .collect();
    assert!(!planned.is_empty() && !planned.contains(&3));
}

#[tokio::test]
async fn review_after_start_conflicts() {
    let app = app();
    let id = create(&app, &small_scene(2), 3).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/mission/start"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let uri = format!("/sessions/{id}/targets/1/review");
    let (status, body) = call_json(&app, "POST", &uri, Some(json!({"decision": "approve"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "invalid_state");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/mission/start"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // The stream ends once the mission completes.
    let events = read_events(&app, &id, None).await;
    assert_eq!(events.last().unwrap().event, "transition");
    assert!(events.last().unwrap().data.contains("\"to\":\"complete\""));
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
}

#[tokio::test]
async fn status_codes_for_bad_requests() {
    let app = app();
    let (status, body) = call_json(&app, "GET", "/sessions/nope/targets", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    assert!(body["message"].is_string());

    let (status, body) = call_json(&app, "POST", "/sessions", Some(json!({"seed": "seven"}))).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("validation"))
    );
    let (status, _) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = serde_json::to_value(ppln_core::MissionConfig::default()).unwrap();
    bad["budget"]["spray"] = json!(-1.0);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"scene": small_scene(1), "seed": 1, "config": bad})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let id = create(&app, &small_scene(1), 1).await;
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let review = format!("/sessions/{id}/targets/1/review");
    let (status, _) = call(&app, "POST", &review, Some(json!({"decision": "approve"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    call(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    let (status, _) = call(&app, "POST", &review, Some(json!({"decision": "maybe"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", &review, Some(json!({}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/targets/999/review"),
        Some(json!({"decision": "approve"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/frame?kind=thermal"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn frames_are_png() {
    let app = app();
    let id = create(&app, &small_scene(5), 2).await;
    call(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    for kind in ["rgb", "depth", "masks"] {
        let (status, bytes) = call(
            &app,
            "GET",
            &format!("/sessions/{id}/frame?kind={kind}"),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n", "{kind}");
    }
}

#[tokio::test]
async fn approving_twice_is_one_pending_decision() {
    let app = app();
    let id = create(&app, &small_scene(6), 2).await;
    call(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    let uri = format!("/sessions/{id}/targets/2/review");
    for _ in 0..2 {
        let (status, _) = call(&app, "POST", &uri, Some(json!({"decision": "approve"}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, info) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(info["pending_reviews"], 1);
    assert_eq!(info["phase"], "operator_review");
}

#[tokio::test]
async fn concurrent_streams_see_the_whole_log_once() {
    let app = app();
    let id = create(&app, &small_scene(7), 9).await;
    call(&app, "POST", &format!("/sessions/{id}/perceive"), None).await;
    let (a, b) = (app.clone(), app.clone());
    let (ia, ib) = (id.clone(), id.clone());
    let ta = tokio::spawn(async move { read_events(&a, &ia, None).await });
    let tb = tokio::spawn(async move { read_events(&b, &ib, None).await });
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/mission/start"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (ea, eb) = (ta.await.unwrap(), tb.await.unwrap());
    assert_eq!(ea, eb);
    assert!(ea.iter().enumerate().all(|(i, e)| e.id == i));

    let (_, snapshot) = call_json(&app, "GET", &format!("/sessions/{id}/snapshot"), None).await;
    assert_eq!(snapshot["events"].as_array().unwrap().len(), ea.len());
    let logged: Vec<String> = snapshot["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e.to_string())
        .collect();
    let streamed: Vec<String> = ea
        .iter()
        .map(|e| serde_json::from_str::<Value>(&e.data).unwrap().to_string())
        .collect();
    assert_eq!(logged, streamed);

    // Resuming after event k replays exactly the tail.
    let k = ea.len() / 2;
    let tail = read_events(&app, &id, Some(k)).await;
    assert_eq!(tail, ea[k + 1..]);
}

#[tokio::test]
async fn snapshots_persist_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(ServiceOptions {
        snapshot_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    });
    let id = create(&app, &small_scene(8), 4).await;
    call(
        &app,
        "POST",
        &format!("/sessions/{id}/mission/start?wait=true"),
        None,
    )
    .await;
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/snapshot"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = std::fs::read_to_string(body["path"].as_str().unwrap()).unwrap();
    let saved: ppln_cli::service::SessionSnapshot = serde_json::from_str(&text).unwrap();
    assert_eq!(saved.schema, ppln_cli::service::SNAPSHOT_SCHEMA);
    assert_eq!(saved.phase, PhaseKind::Complete);
    assert!(saved.report.is_some());

    let (status, _) = call(
        &router(ServiceOptions::default()),
        "POST",
        "/sessions/s1/snapshot",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
