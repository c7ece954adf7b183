//! HTTP API over [`SessionManager`]. Events are served as JSON pages or,
//! with `Accept: text/event-stream`, as server-sent events.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use topopt_agents::events::AgentEvent;

use crate::session::{Session, SessionError, SessionManager, SessionSnapshot, SessionState};

const POLL_INTERVAL: Duration = Duration::from_millis(100);

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let status = match &self {
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict { .. } => StatusCode::CONFLICT,
            SessionError::EmptyText => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Debug, Deserialize)]
pub struct SinceQuery {
    #[serde(default)]
    pub since: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventPage {
    pub state: SessionState,
    pub events: Vec<AgentEvent>,
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", post(post_query))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/artifacts", get(list_artifacts))
        .route("/sessions/{id}/artifacts/{name}", get(get_artifact))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/report", get(get_report))
        .with_state(manager)
}

async fn create_session(State(m): State<Arc<SessionManager>>) -> Result<(StatusCode, Json<SessionSnapshot>), SessionError> {
    let s = m.create()?;
    Ok((StatusCode::CREATED, Json(s.snapshot())))
}

async fn get_session(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, SessionError> {
    Ok(Json(m.get(&id)?.snapshot()))
}

async fn post_query(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Json(body): Json<TextBody>,
) -> Result<(StatusCode, Json<SessionSnapshot>), SessionError> {
    let s = m.get(&id)?;
    s.post_query(&body.text)?;
    Ok((StatusCode::ACCEPTED, Json(s.snapshot())))
}

async fn post_feedback(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Json(body): Json<TextBody>,
) -> Result<(StatusCode, Json<SessionSnapshot>), SessionError> {
    let s = m.get(&id)?;
    s.post_feedback(&body.text)?;
    Ok((StatusCode::ACCEPTED, Json(s.snapshot())))
}

fn wants_stream(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

fn last_event_id(headers: &HeaderMap) -> Option<u64> {
    headers.get("last-event-id")?.to_str().ok()?.trim().parse().ok()
}

async fn get_events(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> Result<Response, SessionError> {
    let s = m.get(&id)?;
    if wants_stream(&headers) {
        let since = last_event_id(&headers).unwrap_or(q.since);
        return Ok(Sse::new(event_stream(s, since)).keep_alive(KeepAlive::default()).into_response());
    }
    let state = s.state();
    Ok(Json(EventPage { state, events: s.events_since(q.since) }).into_response())
}

/// Live feed from `since`; the stream ends once the session is no longer
/// running and every event has been sent. Clients resume with
/// `Last-Event-ID`.
fn event_stream(session: Arc<Session>, since: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((session, since, Vec::<AgentEvent>::new()), |(session, mut last, mut pending)| async move {
        loop {
            if let Some(e) = pending.pop() {
                last = e.seq;
                let event = Event::default().id(e.seq.to_string()).event(e.kind()).data(e.to_line());
                return Some((Ok(event), (session, last, pending)));
            }
            let settled = session.state() != SessionState::Running;
            pending = session.events_since(last);
            pending.reverse();
            if pending.is_empty() {
                if settled {
                    return None;
                }
                tokio::time::sleep(POLL_INTERVAL).await;
            }
        }
    })
}

async fn list_artifacts(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Json<Vec<String>>, SessionError> {
    Ok(Json(m.get(&id)?.workspace().list()?))
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next() {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("csv") => "text/csv",
        Some("md") => "text/markdown; charset=utf-8",
        Some("ndjson") => "application/x-ndjson",
        _ => "text/plain; charset=utf-8",
    }
}

async fn get_artifact(
    State(m): State<Arc<SessionManager>>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, SessionError> {
    let ws = m.get(&id)?.workspace();
    let Some(path) = ws.artifact(&name) else {
        return Ok((StatusCode::NOT_FOUND, Json(json!({ "error": format!("no artifact `{name}`") }))).into_response());
    };
    let bytes = tokio::fs::read(path).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&name))], bytes).into_response())
}

async fn get_report(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Response, SessionError> {
    let text = m.get(&id)?.report()?;
    Ok(([(header::CONTENT_TYPE, content_type("report.md"))], text).into_response())
}

/// Serves `manager` on `addr` until the process is stopped.
pub async fn serve(manager: Arc<SessionManager>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(manager)).await
}
