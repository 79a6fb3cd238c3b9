//! HTTP routes: run management, server-sent event streams and steering.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use vqclab_core::agent::{tool_schemas, LoggedEvent, RunConfig, PROMPT_VERSION};
use vqclab_core::tools::Variant;

use crate::registry::{Registry, RunEntry, ServiceError};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub token: Option<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Terminal(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_str()) {
            return (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or invalid bearer token" })))
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/schema", get(schema))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/message", post(post_message))
        .route("/runs/{id}/interrupt", post(interrupt))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/health", get(health)).merge(protected).with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn schema() -> Json<serde_json::Value> {
    let tools: Vec<_> = Variant::ALL.iter().flat_map(|v| tool_schemas(*v)).map(|t| t.to_wire()).collect();
    Json(json!({
        "prompt_version": PROMPT_VERSION,
        "endpoints": {
            "GET /health": "liveness probe",
            "POST /runs": {"body": "RunConfig", "returns": {"id": "string"}},
            "GET /runs": {"returns": "RunHandle[]"},
            "GET /runs/{id}": {"returns": {"summary": "RunSummary", "config": "RunConfig"}},
            "GET /runs/{id}/events": {
                "returns": "text/event-stream; one event per log entry, id = event index, event = entry type; \
                            honours Last-Event-ID and ?from=N"
            },
            "POST /runs/{id}/message": {"body": {"text": "string", "idempotency_key": "string (optional)"},
                                        "returns": {"accepted": "bool", "duplicate": "bool"}},
            "POST /runs/{id}/interrupt": {"returns": {"accepted": "bool"}},
        },
        "RunConfig": {
            "variant": "simple | quanv | full_quantum",
            "budget": "integer >= 1",
            "prompt": "string",
            "backend": {"kind": "scripted", "playlist": {"entries": [{"content": "string", "tool_call": {"name": "string", "arguments": "object or string"}, "after_user": "string (optional)"}]}},
            "backend (alternative)": {"kind": "endpoint", "base_url": "string", "model": "string", "api_key_env": "string", "temperature": "number (optional)", "timeout_secs": "integer (optional)"},
            "master_seed": "integer (default 0)",
            "max_repairs": "integer (default 3)",
            "context_budget_chars": "integer (optional)",
            "quanv_pool_len": "integer (default 1)",
            "steering_wait_ms": "integer (default 0)",
            "retry": {"attempts": "integer (default 3)", "base_delay_ms": "integer (default 500)"},
        },
        "RunStatus": ["running", "waiting_steering", "agent_stopped", "budget_exhausted", "aborted"],
        "event types": ["started", "message", "iteration", "steering", "context_truncated", "status"],
        "tools": tools,
    }))
}

async fn create_run(State(state): State<AppState>, body: axum::body::Bytes) -> Result<Response, ServiceError> {
    let config: RunConfig =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("invalid RunConfig: {e}")))?;
    let registry = state.registry.clone();
    let id = tokio::task::spawn_blocking(move || registry.create(config))
        .await
        .map_err(|e| ServiceError::BadRequest(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn list_runs(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::to_value(state.registry.list()).expect("handles serialize"))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    let entry = state.registry.get(&id)?;
    let log = entry.snapshot().ok_or_else(|| ServiceError::NotFound(id))?;
    Ok(Json(json!({ "summary": log.summary(), "config": log.config })))
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<usize>,
}

fn sse_stream(entry: Arc<RunEntry>, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = entry.event_count.subscribe();
    stream::unfold((entry, rx, from, Vec::<LoggedEvent>::new().into_iter()), |(entry, mut rx, next, mut buffered)| async move {
        loop {
            if let Some(ev) = buffered.next() {
                let kind = serde_json::to_value(&ev.event).ok().and_then(|v| v["type"].as_str().map(str::to_string));
                let data = serde_json::to_string(&ev).expect("event serializes");
                let event = Event::default().id(ev.index.to_string()).event(kind.unwrap_or_default()).data(data);
                return Some((Ok(event), (entry, rx, next + 1, buffered)));
            }
            rx.borrow_and_update();
            let fresh = entry.events_from(next);
            if !fresh.is_empty() {
                buffered = fresh.into_iter();
                continue;
            }
            if entry.is_finished() || rx.changed().await.is_err() {
                // drain anything recorded between the check and the wake-up
                let tail = entry.events_from(next);
                if tail.is_empty() {
                    return None;
                }
                buffered = tail.into_iter();
            }
        }
    })
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let entry = state.registry.get(&id)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map(|last| last + 1);
    let from = resume.or(q.from).unwrap_or(0);
    Ok(Sse::new(sse_stream(entry, from)).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct SteeringBody {
    text: String,
    #[serde(default)]
    idempotency_key: Option<String>,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<SteeringBody>,
) -> Result<Response, ServiceError> {
    let entry = state.registry.get(&id)?;
    let key = body
        .idempotency_key
        .or_else(|| headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string));
    let fresh = entry.steer(&body.text, key)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": true, "duplicate": !fresh })))
        .into_response())
}

async fn interrupt(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    state.registry.get(&id)?.interrupt()?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": true }))).into_response())
}
