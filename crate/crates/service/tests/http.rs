use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use topopt_core::problem::{builtin_benchmark, Benchmark};
use topopt_service::http::{router, EventPage};
use topopt_service::report::SECTION_TITLES;
use topopt_service::session::{SessionManager, SessionState};
use tower::ServiceExt;

fn small_query() -> String {
    let mut spec = builtin_benchmark(Benchmark::Cantilever);
    spec.geometry.nx = 48;
    spec.geometry.ny = 16;
    spec.regularization.r_min = 1.5 * spec.geometry.element_size();
    format!("Solve this problem: {}", spec.to_json())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn events(app: &Router, id: &str, since: u64) -> EventPage {
    let (status, bytes) = get(app, &format!("/sessions/{id}/events?since={since}")).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&bytes).unwrap()
}

fn settle(manager: &SessionManager, id: &str) -> SessionState {
    manager.get(id).unwrap().wait_settled(Duration::from_secs(600))
}

#[tokio::test]
async fn session_lifecycle_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let manager = Arc::new(SessionManager::deterministic(dir.path()).unwrap());
    let app = router(Arc::clone(&manager));

    let (status, created) = post(&app, "/sessions", json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(created["state"], "idle");

    let (status, _) = get(&app, &format!("/sessions/{id}/report")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = post(&app, &format!("/sessions/{id}/feedback"), json!({"text": "add a hole"})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = post(&app, &format!("/sessions/{id}/query"), json!({"text": small_query()})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, _) = post(&app, &format!("/sessions/{id}/query"), json!({"text": "again"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(settle(&manager, &id), SessionState::AwaitingFeedback);

    let page = events(&app, &id, 0).await;
    assert_eq!(page.state, SessionState::AwaitingFeedback);
    assert_eq!(page.events.first().unwrap().kind(), "formulated");
    assert_eq!(page.events.last().unwrap().kind(), "accepted");
    for (i, e) in page.events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    let tail = events(&app, &id, 3).await;
    assert_eq!(tail.events.len(), page.events.len() - 3);
    assert_eq!(tail.events[0].seq, 4);

    let (status, report) = get(&app, &format!("/sessions/{id}/report")).await;
    assert_eq!(status, StatusCode::OK);
    let report = String::from_utf8(report).unwrap();
    let at: Vec<usize> = SECTION_TITLES.iter().map(|t| report.find(t).expect("section present")).collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]));

    let (status, list) = get(&app, &format!("/sessions/{id}/artifacts")).await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<String> = serde_json::from_slice(&list).unwrap();
    for name in ["spec_v1.json", "plan_v1.json", "density_v1.png", "history_v1.csv", "events.ndjson", "report.md"] {
        assert!(list.iter().any(|n| n == name), "{name} missing from {list:?}");
    }
    let res = app
        .clone()
        .oneshot(Request::get(format!("/sessions/{id}/artifacts/density_v1.png")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.headers()[header::CONTENT_TYPE], "image/png");
    let png = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&png[..4], b"\x89PNG");
    let (status, _) = get(&app, &format!("/sessions/{id}/artifacts/..%2Fsecret")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let before = page.events.len() as u64;
    let (status, _) = post(&app, &format!("/sessions/{id}/feedback"), json!({"text": "add a hole"})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(settle(&manager, &id), SessionState::AwaitingFeedback);
    let second = events(&app, &id, before).await;
    assert_eq!(second.events.first().unwrap().kind(), "directive");
    assert_eq!(second.events.last().unwrap().kind(), "accepted");
    let (_, list) = get(&app, &format!("/sessions/{id}/artifacts")).await;
    assert!(String::from_utf8(list).unwrap().contains("spec_v2.json"));

    let req = Request::get(format!("/sessions/{id}/events"))
        .header(header::ACCEPT, "text/event-stream")
        .header("last-event-id", "5")
        .body(Body::empty())
        .unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<u64> = String::from_utf8(body)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("id:"))
        .map(|v| v.trim().parse().unwrap())
        .collect();
    let total = before + second.events.len() as u64;
    assert_eq!(ids, (6..=total).collect::<Vec<_>>());
}

#[tokio::test]
async fn unknown_sessions_and_empty_text() {
    let dir = tempfile::tempdir().unwrap();
    let manager = Arc::new(SessionManager::deterministic(dir.path()).unwrap());
    let app = router(Arc::clone(&manager));
    for uri in ["/sessions/nope", "/sessions/nope/events", "/sessions/nope/report", "/sessions/nope/artifacts"] {
        assert_eq!(get(&app, uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (_, created) = post(&app, "/sessions", json!({})).await;
    let id = created["id"].as_str().unwrap();
    let (status, body) = post(&app, &format!("/sessions/{id}/query"), json!({"text": " "})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string());
    let (status, _) = post(&app, &format!("/sessions/{id}/query"), json!({"words": "x"})).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn aborted_session_reports_reason() {
    let dir = tempfile::tempdir().unwrap();
    let manager = Arc::new(SessionManager::deterministic(dir.path()).unwrap());
    let app = router(Arc::clone(&manager));
    let (_, created) = post(&app, "/sessions", json!({})).await;
    let id = created["id"].as_str().unwrap().to_string();
    post(&app, &format!("/sessions/{id}/query"), json!({"text": "design a bridge"})).await;
    assert_eq!(settle(&manager, &id), SessionState::Aborted);
    let (status, snap) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let snap: Value = serde_json::from_slice(&snap).unwrap();
    assert_eq!(snap["state"], "aborted");
    assert!(snap["error"].is_string());
    assert_eq!(events(&app, &id, 0).await.events.last().unwrap().kind(), "aborted");
}
