//! HTTP session service with a server-sent event stream per session.
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | `GET` | `/scenarios` | | list of scenarios with library coverage |
//! | `POST` | `/sessions` | [`CreateSession`] | `201` with [`SessionCreated`] |
//! | `POST` | `/sessions/{id}/corrections` | [`SubmitCorrection`] | [`CorrectionResponse`] |
//! | `POST` | `/sessions/{id}/step` | | [`Snapshot`] after one tick |
//! | `GET` | `/sessions/{id}/events` | | SSE stream of [`StreamEvent`] |
//! | `DELETE` | `/sessions/{id}` | | [`SessionEnded`] with the full log |
//!
//! Errors are JSON `{"error": ..., "hint": ...}` with status 400 (malformed
//! body or invalid correction), 404 (unknown scenario or session), 409
//! (episode already at its horizon), 410 (session ended) or 412 (missing
//! `D*` library).
//!
//! Every mutation of a session runs under that session's lock, so
//! concurrent submissions apply one at a time in arrival order, and the
//! stream sees events in exactly the order they enter the log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

use crate::dstar::DStarLibrary;
use crate::error::Error;
use crate::evidence::Belief;
use crate::rewards::Scenario;
use crate::sim::{Engine, Episode, EpisodeLog, InferenceModel, LogRecord};
use crate::trajectory::{Correction, Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// The clock advances on its own at the session's tick rate.
    Auto,
    /// The clock advances only on `POST /sessions/{id}/step`.
    #[default]
    Stepped,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario_id: String,
    pub model: InferenceModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SessionMode,
    /// Steps per second in auto mode.
    #[serde(default)]
    pub tick_rate: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitCorrection {
    pub timestep: usize,
    pub agent: usize,
    pub force: Point,
}

/// Immutable view of a session after some event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub scenario_id: String,
    pub model: InferenceModel,
    pub clock: usize,
    pub horizon: usize,
    pub agent_positions: Vec<Point>,
    pub plan: Trajectory,
    pub belief: Belief,
    pub corrections: usize,
    pub done: bool,
    pub last_event_kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub mode: SessionMode,
    pub tick_rate: f64,
    pub created_at: u64,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionResponse {
    pub applied: Correction,
    pub clamped: bool,
    /// The plan as deformed by the correction, before replanning.
    pub deformed_plan: Trajectory,
    pub snapshot: Snapshot,
}

/// One server-sent event. `seq` numbers a session's events from 1 with no
/// gaps; `record` is the log record the event corresponds to. The snapshot
/// sent on connect has no record and repeats the newest `seq` (0 before
/// any event).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEvent {
    pub seq: u64,
    pub snapshot: Snapshot,
    pub record: Option<LogRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEnded {
    pub session_id: String,
    pub log_path: Option<String>,
    pub predicted_theta_index: usize,
    pub log: Vec<LogRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub scenario: Scenario,
    /// Largest `K` covered by the loaded library (0 without one).
    pub library_k_max: usize,
    pub models: Vec<InferenceModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

fn api_error(status: StatusCode, error: impl Into<String>, hint: Option<&str>) -> Response {
    (
        status,
        Json(ApiError {
            error: error.into(),
            hint: hint.map(str::to_string),
        }),
    )
        .into_response()
}

fn engine_error(e: Error) -> Response {
    match e {
        Error::InvalidCorrection(_) | Error::Shape(_) => api_error(StatusCode::BAD_REQUEST, e.to_string(), None),
        Error::EpisodeEnded => api_error(StatusCode::CONFLICT, "episode reached its horizon", None),
        Error::LibraryMiss(_) => api_error(
            StatusCode::PRECONDITION_FAILED,
            e.to_string(),
            Some("precompute a library with `seqcorr precompute` and restart the server"),
        ),
        other => api_error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string(), None),
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory for finished episode logs; logs are only returned when
    /// unset.
    pub log_dir: Option<PathBuf>,
    pub default_tick_rate: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            log_dir: None,
            default_tick_rate: 5.0,
        }
    }
}

struct SessionInner {
    episode: Episode,
    /// Events published so far.
    seq: u64,
}

struct Session {
    id: String,
    scenario_id: String,
    model: InferenceModel,
    inner: Mutex<SessionInner>,
    events: broadcast::Sender<StreamEvent>,
    ticker: std::sync::Mutex<Option<tokio::task::JoinHandle<()>>>,
}

impl Session {
    fn snapshot(&self, episode: &Episode, last_event_kind: &str) -> Snapshot {
        let s = episode.state();
        Snapshot {
            session_id: self.id.clone(),
            scenario_id: self.scenario_id.clone(),
            model: self.model,
            clock: s.clock,
            horizon: episode.engine().scenario().horizon,
            agent_positions: s.positions().to_vec(),
            plan: s.plan.clone(),
            belief: s.belief.clone(),
            corrections: s.corrections.len(),
            done: episode.is_done(),
            last_event_kind: last_event_kind.to_string(),
        }
    }

    /// Publishes the episode's newest log record; callers hold the lock.
    fn publish(&self, inner: &mut SessionInner) -> Snapshot {
        let record = inner.episode.records().last().cloned();
        let kind = record.as_ref().map_or("snapshot", LogRecord::kind);
        let snapshot = self.snapshot(&inner.episode, kind);
        inner.seq += 1;
        let event = StreamEvent {
            seq: inner.seq,
            snapshot: snapshot.clone(),
            record,
        };
        // No subscribers is fine.
        let _ = self.events.send(event);
        snapshot
    }

    async fn tick(&self) -> Result<Snapshot, Error> {
        let mut inner = self.inner.lock().await;
        inner.episode.advance()?;
        Ok(self.publish(&mut inner))
    }
}

/// Shared state of the service.
pub struct AppState {
    engines: BTreeMap<String, Arc<Engine>>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    ended: Mutex<HashSet<String>>,
    counter: AtomicU64,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(engines: Vec<Arc<Engine>>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            engines: engines.into_iter().map(|e| (e.scenario().id.clone(), e)).collect(),
            sessions: Mutex::new(HashMap::new()),
            ended: Mutex::new(HashSet::new()),
            counter: AtomicU64::new(0),
            config,
        })
    }

    async fn session(&self, id: &str) -> Result<Arc<Session>, Response> {
        if let Some(s) = self.sessions.lock().await.get(id) {
            return Ok(Arc::clone(s));
        }
        if self.ended.lock().await.contains(id) {
            Err(api_error(StatusCode::GONE, format!("session {id} has ended"), None))
        } else {
            Err(api_error(StatusCode::NOT_FOUND, format!("no session {id}"), None))
        }
    }
}

/// Loads every `*.json` scenario in `dir`, with the library at
/// `<stem>.dstar.json` when present.
pub fn load_scenario_dir(dir: &Path) -> crate::Result<Vec<Arc<Engine>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_library_path(p))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let scenario = Scenario::load(p)?;
            let lib_path = library_path_for(p);
            let library = if lib_path.exists() {
                Some(DStarLibrary::load(&lib_path)?)
            } else {
                None
            };
            Ok(Arc::new(Engine::with_defaults(scenario, library)?))
        })
        .collect()
}

fn is_library_path(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".dstar.json"))
}

/// Default library location for a scenario file: `<stem>.dstar.json`
/// beside it.
pub fn library_path_for(scenario_path: &Path) -> PathBuf {
    let stem = scenario_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    scenario_path.with_file_name(format!("{stem}.dstar.json"))
}

// Handlers return the rejection response as-is.
#[allow(clippy::result_large_err)]
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body)
        .map_err(|e| api_error(StatusCode::BAD_REQUEST, format!("malformed request body: {e}"), None))
}

async fn list_scenarios(State(app): State<Arc<AppState>>) -> Json<Vec<ScenarioInfo>> {
    Json(
        app.engines
            .values()
            .map(|e| {
                let k = e.library_k_max();
                let models = InferenceModel::ALL
                    .into_iter()
                    .filter(|m| *m != InferenceModel::Sequence || k > 0)
                    .collect();
                ScenarioInfo {
                    scenario: e.scenario().clone(),
                    library_k_max: k,
                    models,
                }
            })
            .collect(),
    )
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: CreateSession = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Some(engine) = app.engines.get(&req.scenario_id) else {
        return api_error(StatusCode::NOT_FOUND, format!("unknown scenario `{}`", req.scenario_id), None);
    };
    let tick_rate = req.tick_rate.unwrap_or(app.config.default_tick_rate);
    if !(tick_rate > 0.0 && tick_rate.is_finite()) {
        return api_error(StatusCode::BAD_REQUEST, "tick_rate must be positive", None);
    }
    let episode = match Episode::new(Arc::clone(engine), req.model, req.seed, None) {
        Ok(e) => e,
        Err(e) => return engine_error(e),
    };
    let n = app.counter.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}-{:016x}", rand::random::<u64>());
    let (tx, _) = broadcast::channel(1024);
    let session = Arc::new(Session {
        id: id.clone(),
        scenario_id: req.scenario_id.clone(),
        model: req.model,
        inner: Mutex::new(SessionInner { episode, seq: 0 }),
        events: tx,
        ticker: std::sync::Mutex::new(None),
    });
    let snapshot = {
        let inner = session.inner.lock().await;
        session.snapshot(&inner.episode, "snapshot")
    };
    app.sessions.lock().await.insert(id.clone(), Arc::clone(&session));

    if req.mode == SessionMode::Auto {
        let weak = Arc::downgrade(&session);
        let period = Duration::from_secs_f64(1.0 / tick_rate);
        let handle = tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.tick().await;
            loop {
                interval.tick().await;
                let Some(s) = weak.upgrade() else { break };
                if s.tick().await.is_err() {
                    break;
                }
            }
        });
        *session.ticker.lock().expect("ticker lock") = Some(handle);
    }

    let created_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    (
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            mode: req.mode,
            tick_rate,
            created_at,
            snapshot,
        }),
    )
        .into_response()
}

async fn submit_correction(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Response {
    let session = match app.session(&id).await {
        Ok(s) => s,
        Err(resp) => return resp,
    };
    let req: SubmitCorrection = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let mut inner = session.inner.lock().await;
    let outcome = match inner
        .episode
        .apply_correction(Correction::new(req.timestep, req.agent, req.force))
    {
        Ok(o) => o,
        Err(e) => return engine_error(e),
    };
    let snapshot = session.publish(&mut inner);
    Json(CorrectionResponse {
        applied: outcome.applied,
        clamped: outcome.clamped,
        deformed_plan: outcome.deformed_plan,
        snapshot,
    })
    .into_response()
}

async fn step_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let session = match app.session(&id).await {
        Ok(s) => s,
        Err(resp) => return resp,
    };
    match session.tick().await {
        Ok(snapshot) => Json(snapshot).into_response(),
        Err(e) => engine_error(e),
    }
}

async fn stream_events(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, Response> {
    let session = app.session(&id).await?;
    // Subscribe under the lock so the opening snapshot and the first live
    // event cannot interleave.
    let (first, rx) = {
        let inner = session.inner.lock().await;
        let rx = session.events.subscribe();
        let first = StreamEvent {
            seq: inner.seq,
            snapshot: session.snapshot(&inner.episode, "snapshot"),
            record: None,
        };
        (first, rx)
    };
    let to_event = |e: &StreamEvent| {
        Event::default()
            .event(e.snapshot.last_event_kind.clone())
            .json_data(e)
            .expect("stream events serialize")
    };
    let opening = stream::once({
        let ev = to_event(&first);
        async move { Ok(ev) }
    });
    let live = stream::unfold(rx, move |mut rx| async move {
        match rx.recv().await {
            Ok(e) => Some((Ok(to_event(&e)), rx)),
            // Lagging or closed: end the stream; clients reconnect to resync.
            Err(_) => None,
        }
    });
    Ok(Sse::new(futures::StreamExt::chain(opening, live)).keep_alive(KeepAlive::default()))
}

async fn end_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(session) = app.sessions.lock().await.remove(&id) else {
        return api_error(StatusCode::NOT_FOUND, format!("no session {id}"), None);
    };
    app.ended.lock().await.insert(id.clone());
    if let Some(h) = session.ticker.lock().expect("ticker lock").take() {
        h.abort();
    }
    let mut inner = session.inner.lock().await;
    let log: EpisodeLog = match inner.episode.finish() {
        Ok(l) => l,
        Err(e) => return engine_error(e),
    };
    // Stream subscribers see the final record as the last event.
    session.publish(&mut inner);
    let log_path = match &app.config.log_dir {
        Some(dir) => {
            let path = dir.join(format!("{id}.jsonl"));
            if let Err(e) = log.save(&path) {
                return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None);
            }
            Some(path.display().to_string())
        }
        None => None,
    };
    Json(SessionEnded {
        session_id: id,
        log_path,
        predicted_theta_index: log.predicted_theta_index(),
        log: log.records().to_vec(),
    })
    .into_response()
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(end_session))
        .route("/sessions/{id}/corrections", post(submit_correction))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/events", get(stream_events))
        .with_state(app)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
