//! HTTP sessions over the layout engine.
//!
//! Each session owns one engine. `advance` runs on a blocking thread while handlers read the
//! published snapshots and the live view, both swapped in atomically behind short locks.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use driftmap_core::engine::{earliest, snapshot_nodes, split_into_batches};
use driftmap_core::io::{snapshot_to_string, to_canonical_json};
use driftmap_core::model::RawRecord;
use driftmap_core::{build_lineage, load_dataset, DataRecord, Engine, LabelClient, LiveView, RunConfig, TimestepSnapshot};

/// Step reports are dropped when they arrive faster than this.
pub const STEP_EVENT_INTERVAL: Duration = Duration::from_millis(34);

type ClientFactory = dyn Fn(&RunConfig) -> Option<Arc<dyn LabelClient>> + Send + Sync;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
    clients: Box<ClientFactory>,
}

impl AppState {
    /// `clients` picks the external label client for a session's config.
    pub fn new(clients: impl Fn(&RunConfig) -> Option<Arc<dyn LabelClient>> + Send + Sync + 'static) -> Self {
        AppState {
            inner: Arc::new(Inner {
                sessions: RwLock::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                clients: Box::new(clients),
            }),
        }
    }

    /// Registers a session over already loaded records and returns its summary.
    pub fn insert_session(&self, records: Vec<DataRecord>, config: RunConfig) -> Result<SessionCreated, ApiError> {
        config
            .validate()
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let Some(origin) = earliest(&records) else {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "dataset is empty"));
        };
        let mut engine = Engine::new(config.clone(), origin);
        if let Some(client) = (self.inner.clients)(&config) {
            engine = engine.with_label_client(client);
        }
        let by_id: HashMap<String, DataRecord> = records.iter().map(|r| (r.id.clone(), r.clone())).collect();
        let batches = split_into_batches(records, engine.origin(), &config.timestep)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let (events, _) = broadcast::channel(256);
        let session = Session {
            records: by_id,
            total_batches: batches.len(),
            advancing: AtomicBool::new(false),
            live: RwLock::new(Arc::new(engine.live_view())),
            work: Mutex::new(Work {
                engine,
                pending: batches.into(),
            }),
            snapshots: RwLock::new(Vec::new()),
            events,
        };
        let created = SessionCreated {
            session_id: self.inner.next_id.fetch_add(1, Ordering::Relaxed),
            records: session.records.len(),
            batches: session.total_batches,
        };
        self.inner.sessions.write().unwrap().insert(created.session_id, Arc::new(session));
        Ok(created)
    }

    fn session(&self, id: u64) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Step {
        batch_index: usize,
        iteration: usize,
        max_displacement: f64,
        total_stress: f64,
    },
    BatchAdvanced {
        batch_index: usize,
        nodes: usize,
        clusters: usize,
    },
    LabelingCompleted {
        batch_index: usize,
        labels: Vec<ClusterLabelSummary>,
    },
}

impl StreamEvent {
    fn name(&self) -> &'static str {
        match self {
            StreamEvent::Step { .. } => "step",
            StreamEvent::BatchAdvanced { .. } => "batch_advanced",
            StreamEvent::LabelingCompleted { .. } => "labeling_completed",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterLabelSummary {
    pub cluster_id: u64,
    pub label: String,
}

struct Work {
    engine: Engine,
    pending: VecDeque<Vec<DataRecord>>,
}

struct Session {
    records: HashMap<String, DataRecord>,
    total_batches: usize,
    advancing: AtomicBool,
    work: Mutex<Work>,
    snapshots: RwLock<Vec<Arc<TimestepSnapshot>>>,
    live: RwLock<Arc<LiveView>>,
    events: broadcast::Sender<StreamEvent>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        canonical(self.status, &serde_json::json!({ "error": self.message }))
    }
}

fn canonical<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match to_canonical_json(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/snapshots/{k}", get(snapshot))
        .route("/sessions/{id}/live", get(live))
        .route("/sessions/{id}/lineage", get(lineage))
        .route("/sessions/{id}/stream", get(stream_events))
        .route("/sessions/{id}/clusters/{cid}/members", get(members))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub dataset_path: PathBuf,
    #[serde(default)]
    pub run_config: Option<RunConfig>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionCreated {
    pub session_id: u64,
    pub records: usize,
    pub batches: usize,
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let config = req.run_config.unwrap_or_default();
    let path = req.dataset_path;
    let records = tokio::task::spawn_blocking(move || load_dataset(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;

    let created = state.insert_session(records, config)?;
    Ok(canonical(StatusCode::CREATED, &created))
}

#[derive(Debug, Serialize)]
struct ClusterSummary {
    cluster_id: u64,
    parent_id: Option<u64>,
    size: usize,
    label: String,
}

#[derive(Debug, Serialize)]
struct AdvanceSummary {
    batch_index: usize,
    nodes: usize,
    misc: usize,
    threshold: Option<f64>,
    stress: f64,
    remaining_batches: usize,
    clusters: Vec<ClusterSummary>,
}

/// Clears the advancing flag even if the blocking task panics.
struct AdvanceGuard(Arc<Session>);

impl Drop for AdvanceGuard {
    fn drop(&mut self) {
        self.0.advancing.store(false, Ordering::Release);
    }
}

async fn advance(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    if session
        .advancing
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "an advance is already running"));
    }
    let guard = AdvanceGuard(session.clone());
    let summary = tokio::task::spawn_blocking(move || run_advance(&guard.0))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(canonical(StatusCode::OK, &summary))
}

fn run_advance(session: &Session) -> Result<AdvanceSummary, ApiError> {
    let mut work = session.work.lock().unwrap();
    let Some(batch) = work.pending.pop_front() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "every batch has been advanced"));
    };
    let batch_index = work.engine.next_batch();
    let mut last_emit: Option<Instant> = None;
    let result = work.engine.advance_with(batch.clone(), |iteration, report, layout| {
        if last_emit.is_some_and(|t| t.elapsed() < STEP_EVENT_INTERVAL) {
            return;
        }
        last_emit = Some(Instant::now());
        *session.live.write().unwrap() = Arc::new(LiveView {
            batch_index: Some(batch_index),
            steps_taken: layout.steps_taken,
            nodes: snapshot_nodes(layout),
        });
        let _ = session.events.send(StreamEvent::Step {
            batch_index,
            iteration,
            max_displacement: report.max_displacement,
            total_stress: report.total_stress,
        });
    });
    let snap = match result {
        Ok(s) => s,
        Err(e) => {
            work.pending.push_front(batch);
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()));
        }
    };
    session.snapshots.write().unwrap().push(snap.clone());
    *session.live.write().unwrap() = Arc::new(work.engine.live_view());
    let _ = session.events.send(StreamEvent::BatchAdvanced {
        batch_index: snap.batch_index,
        nodes: snap.nodes.len(),
        clusters: snap.clusters.len(),
    });
    let labels = snap
        .clusters
        .iter()
        .map(|c| ClusterLabelSummary {
            cluster_id: c.cluster_id,
            label: c.labels.display(),
        })
        .collect();
    let _ = session.events.send(StreamEvent::LabelingCompleted {
        batch_index: snap.batch_index,
        labels,
    });

    Ok(AdvanceSummary {
        batch_index: snap.batch_index,
        nodes: snap.nodes.len(),
        misc: snap.misc_ids.len(),
        threshold: snap.threshold,
        stress: snap.stress,
        remaining_batches: work.pending.len(),
        clusters: snap
            .clusters
            .iter()
            .map(|c| ClusterSummary {
                cluster_id: c.cluster_id,
                parent_id: c.parent_id,
                size: c.member_ids.len(),
                label: c.labels.display(),
            })
            .collect(),
    })
}

async fn snapshot(State(state): State<AppState>, Path((id, k)): Path<(u64, usize)>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let snap = session
        .snapshots
        .read()
        .unwrap()
        .get(k)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no snapshot {k}")))?;
    let text = snapshot_to_string(&snap).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], text).into_response())
}

#[derive(Serialize)]
struct LiveBody<'a> {
    batch_index: Option<usize>,
    steps_taken: u64,
    nodes: &'a [driftmap_core::SnapshotNode],
    clusters: &'a [driftmap_core::ClusterRecord],
    misc_ids: &'a [String],
}

async fn live(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let view = session.live.read().unwrap().clone();
    let last = session.snapshots.read().unwrap().last().cloned();
    let body = LiveBody {
        batch_index: view.batch_index,
        steps_taken: view.steps_taken,
        nodes: &view.nodes,
        clusters: last.as_ref().map_or(&[], |s| s.clusters.as_slice()),
        misc_ids: last.as_ref().map_or(&[], |s| s.misc_ids.as_slice()),
    };
    Ok(canonical(StatusCode::OK, &body))
}

async fn lineage(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let snaps = session.snapshots.read().unwrap().clone();
    let forest = tokio::task::spawn_blocking(move || build_lineage(&snaps))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(canonical(StatusCode::OK, &forest))
}

#[derive(Serialize)]
struct Member {
    id: String,
    timestamp: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    description: Option<String>,
}

#[derive(Serialize)]
struct MembersBody {
    cluster_id: u64,
    batch_index: usize,
    members: Vec<Member>,
}

async fn members(State(state): State<AppState>, Path((id, cid)): Path<(u64, u64)>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let snaps = session.snapshots.read().unwrap().clone();
    let (batch_index, cluster) = snaps
        .iter()
        .find_map(|s| s.cluster(cid).map(|c| (s.batch_index, c.clone())))
        .ok_or_else(|| ApiError::not_found(format!("no cluster {cid}")))?;
    let members = cluster
        .member_ids
        .iter()
        .filter_map(|m| session.records.get(m))
        .map(|r| {
            let raw = RawRecord::from(r);
            Member {
                id: raw.id,
                timestamp: raw.timestamp,
                kind: raw.kind,
                text: raw.text,
                image_path: raw.image_path,
                description: raw.description,
            }
        })
        .collect();
    Ok(canonical(
        StatusCode::OK,
        &MembersBody {
            cluster_id: cid,
            batch_index,
            members,
        },
    ))
}

async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = state.session(id)?;
    let rx = session.events.subscribe();
    let events = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = serde_json::to_string(&ev).unwrap_or_default();
                    return Some((Ok(Event::default().event(ev.name()).data(data)), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
