//! Read-only JSON API over the event log and the status board.
//!
//! | route | answer |
//! |---|---|
//! | `GET /health` | overall state and per-camera freshness |
//! | `GET /cameras` | configured cameras with their state |
//! | `GET /cameras/{id}/status` | full status snapshot of one camera |
//! | `GET /cameras/{id}/events?from&to` | logged events overlapping `[from, to]` |
//! | `GET /cameras/{id}/daily?date` | daily aggregate for a UTC date |
//!
//! `from`, `to` and `date` take `YYYY-MM-DD`; `from`/`to` also take RFC 3339
//! timestamps. A date as `to` covers that whole day. Errors answer with
//! `{"error": {"code": ..., "message": ...}}`. With a bearer token
//! configured, every route except `/health` requires it.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Days, NaiveDate, NaiveTime, TimeDelta, Utc};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::aggregate::{aggregate_daily, DailyAggregate};
use crate::config::MonitorConfig;
use crate::eventlog::{read_events, read_events_around};
use crate::events::PassageEvent;
use crate::pipeline::{CameraState, CameraStatus, StatusBoard};
use crate::MonitorError;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unknown_camera(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_camera", format!("no camera with id '{id}'"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

struct Context {
    board: StatusBoard,
    log_dir: PathBuf,
    token: Option<String>,
    freshness_intervals: f64,
}

#[derive(Clone)]
pub struct AppState(Arc<Context>);

impl AppState {
    pub fn new(config: &MonitorConfig, board: StatusBoard) -> Self {
        Self(Arc::new(Context {
            board,
            log_dir: config.log_dir.clone(),
            token: config.server.bearer_token.clone(),
            freshness_intervals: config.monitor.freshness_intervals,
        }))
    }

    fn status(&self, id: &str) -> Result<CameraStatus, ApiError> {
        let board = self.0.board.read().unwrap_or_else(|e| e.into_inner());
        board.get(id).cloned().ok_or_else(|| ApiError::unknown_camera(id))
    }

    fn statuses(&self) -> Vec<CameraStatus> {
        let board = self.0.board.read().unwrap_or_else(|e| e.into_inner());
        board.values().cloned().collect()
    }
}

pub fn router(state: AppState) -> Router {
    let cameras = Router::new()
        .route("/cameras", get(list_cameras))
        .route("/cameras/{id}/status", get(camera_status))
        .route("/cameras/{id}/events", get(camera_events))
        .route("/cameras/{id}/daily", get(camera_daily))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(cameras)
        .fallback(not_found)
        .with_state(state)
}

/// Binds `addr`; an address already in use is reported as [`MonitorError::Bind`].
pub async fn bind(addr: &str) -> Result<TcpListener, MonitorError> {
    TcpListener::bind(addr).await.map_err(|source| MonitorError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), MonitorError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("serving on http://{addr}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| MonitorError::Server(e.to_string()))
}

pub fn local_addr(listener: &TcpListener) -> Result<SocketAddr, MonitorError> {
    listener.local_addr().map_err(|e| MonitorError::Server(e.to_string()))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.0.token {
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

#[derive(Serialize)]
struct CameraHealth {
    id: String,
    state: CameraState,
    last_frame_at: Option<DateTime<Utc>>,
    seconds_since_last_frame: Option<f64>,
    fresh: bool,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    cameras: Vec<CameraHealth>,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let now = Utc::now();
    let mut ok = true;
    let cameras = state
        .statuses()
        .into_iter()
        .map(|s| {
            let age = s.last_processed_at.map(|t| (now - t).as_seconds_f64().max(0.0));
            let fresh = age.is_some_and(|a| a <= s.poll_interval_seconds * state.0.freshness_intervals);
            let live = matches!(s.state, CameraState::Running | CameraState::Starting);
            if matches!(s.state, CameraState::Degraded | CameraState::Failed) || (live && !fresh && age.is_some()) {
                ok = false;
            }
            CameraHealth {
                id: s.id,
                state: s.state,
                last_frame_at: s.last_frame_at,
                seconds_since_last_frame: age,
                fresh,
            }
        })
        .collect();
    Json(Health {
        status: if ok { "ok" } else { "degraded" },
        cameras,
    })
}

#[derive(Serialize)]
struct CameraSummary {
    id: String,
    enabled: bool,
    source: String,
    detector: String,
    poll_interval_seconds: f64,
    state: CameraState,
    last_frame_at: Option<DateTime<Utc>>,
}

async fn list_cameras(State(state): State<AppState>) -> Json<Vec<CameraSummary>> {
    Json(
        state
            .statuses()
            .into_iter()
            .map(|s| CameraSummary {
                id: s.id,
                enabled: s.enabled,
                source: s.source,
                detector: s.detector,
                poll_interval_seconds: s.poll_interval_seconds,
                state: s.state,
                last_frame_at: s.last_frame_at,
            })
            .collect(),
    )
}

async fn camera_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CameraStatus>, ApiError> {
    state.status(&id).map(Json)
}

/// A query bound: a whole date or an exact instant.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Date(NaiveDate),
    Instant(DateTime<Utc>),
}

impl Bound {
    fn parse(name: &str, text: &str) -> Result<Self, ApiError> {
        if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
            return Ok(Bound::Date(d));
        }
        DateTime::parse_from_rfc3339(text)
            .map(|t| Bound::Instant(t.with_timezone(&Utc)))
            .map_err(|_| ApiError::bad_request(format!("{name}={text:?} is neither YYYY-MM-DD nor an RFC 3339 timestamp")))
    }

    fn date(self) -> NaiveDate {
        match self {
            Bound::Date(d) => d,
            Bound::Instant(t) => t.date_naive(),
        }
    }

    fn lower(self) -> DateTime<Utc> {
        match self {
            Bound::Date(d) => d.and_time(NaiveTime::MIN).and_utc(),
            Bound::Instant(t) => t,
        }
    }

    fn upper(self) -> DateTime<Utc> {
        match self {
            Bound::Date(d) => d.and_time(NaiveTime::MIN).and_utc() + TimeDelta::days(1) - TimeDelta::nanoseconds(1),
            Bound::Instant(t) => t,
        }
    }
}

fn param(query: &HashMap<String, String>, name: &str) -> Result<Option<Bound>, ApiError> {
    query.get(name).map(|v| Bound::parse(name, v)).transpose()
}

async fn read_blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, MonitorError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)
}

async fn camera_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<Vec<PassageEvent>>, ApiError> {
    state.status(&id)?;
    let from = param(&query, "from")?;
    let to = param(&query, "to")?;
    if let (Some(f), Some(t)) = (from, to) {
        if f.lower() > t.upper() {
            return Err(ApiError::bad_request("from is after to"));
        }
    }
    // Events are filed under their start date and may run into the next day.
    let first_file = from.and_then(|f| f.date().checked_sub_days(Days::new(1)));
    let last_file = to.map(Bound::date);
    let root = state.0.log_dir.clone();
    let cam = id.clone();
    let events = read_blocking(move || read_events(&root, &cam, first_file, last_file)).await?;
    Ok(Json(
        events
            .into_iter()
            .filter(|e| from.is_none_or(|f| e.end >= f.lower()) && to.is_none_or(|t| e.start <= t.upper()))
            .collect(),
    ))
}

async fn camera_daily(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<DailyAggregate>, ApiError> {
    state.status(&id)?;
    let text = query
        .get("date")
        .ok_or_else(|| ApiError::bad_request("missing required query parameter 'date'"))?;
    let date = NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| ApiError::bad_request(format!("date={text:?} is not YYYY-MM-DD")))?;
    let root = state.0.log_dir.clone();
    let cam = id.clone();
    let events = read_blocking(move || read_events_around(&root, &cam, date)).await?;
    Ok(Json(aggregate_daily(&events, date, &id)))
}
