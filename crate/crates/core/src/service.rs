//! HTTP service for live runs, versioned under `/v1`.
//!
//! Each run is driven by its own worker thread, which is the only writer of
//! the run's state. Handlers read published snapshots and forward label
//! submissions to the worker over a channel. Once the last pending label of
//! an iteration arrives the worker generates, retrains, checkpoints and
//! selects the next batch on its own.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::corpus::{load_jsonl, Pool, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::ClassCountTable;
use crate::orchestrate::{AnnotatorKind, Event, EventKind, FieldError, Run, RunConfig};
use crate::strategy::Strategy;

pub const TOKEN_ENV: &str = "ALGUIDE_SERVICE_TOKEN";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Run checkpoints and event logs live under `<data_dir>/runs/<id>/`.
    pub data_dir: PathBuf,
    /// Required bearer token, if any.
    pub token: Option<String>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            token: None,
        }
    }

    pub fn with_env_token(mut self) -> Self {
        self.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initializing,
    Selecting,
    AwaitingLabels,
    Generating,
    Retraining,
    Finished,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub phase: Phase,
    pub iteration: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Labeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub run_id: String,
    pub instance_id: String,
    pub text: String,
    pub candidate_classes: Vec<String>,
    pub selected_at: u32,
    pub status: ItemStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatestMetrics {
    pub iteration: u32,
    pub split: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub phase: Phase,
    pub iteration: u32,
    pub remaining_budget: usize,
    pub budget: usize,
    pub batch: usize,
    pub strategy: Strategy,
    pub class_counts: Option<ClassCountTable>,
    pub latest_metrics: Option<LatestMetrics>,
    pub pending: usize,
    pub labeled_this_iteration: usize,
    pub phase_history: Vec<PhaseChange>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
struct Snapshot {
    status: RunStatus,
    taxonomy: Option<Taxonomy>,
    queue: Vec<AnnotationItem>,
    /// Labels accepted for this run, current iteration included.
    accepted: HashMap<String, String>,
    events: Vec<Event>,
}

enum Command {
    Label {
        instance_id: String,
        label: String,
        reply: oneshot::Sender<LabelOutcome>,
    },
}

#[derive(Debug)]
enum LabelOutcome {
    Accepted { remaining: usize },
    Unchanged,
    Conflict(String),
    Invalid(String),
}

struct RunEntry {
    id: String,
    snapshot: RwLock<Arc<Snapshot>>,
    commands: Mutex<mpsc::Sender<Command>>,
}

impl RunEntry {
    fn read(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn update(&self, f: impl FnOnce(&mut Snapshot)) {
        let mut guard = self.snapshot.write().expect("snapshot lock");
        let mut next = (**guard).clone();
        f(&mut next);
        *guard = Arc::new(next);
    }
}

struct AppState {
    config: ServiceConfig,
    runs: RwLock<HashMap<String, Arc<RunEntry>>>,
    idempotency: Mutex<HashMap<String, String>>,
    next_id: AtomicU64,
}

enum RunSource {
    Fresh {
        config: Box<RunConfig>,
        taxonomy: Taxonomy,
        unlabeled: Pool,
        bootstrap: Pool,
        monitor: Option<Pool>,
    },
    Resume(PathBuf),
}

fn run_dir(data_dir: &FsPath, id: &str) -> PathBuf {
    data_dir.join("runs").join(id)
}

fn publish(entry: &RunEntry, run: &Run, phase: Phase, queue: Option<Vec<AnnotationItem>>) {
    let st = run.state();
    entry.update(|snap| {
        if snap.status.phase != phase {
            snap.status.phase_history.push(PhaseChange {
                phase,
                iteration: st.iteration,
            });
        }
        if let Some(q) = queue {
            snap.queue = q;
        }
        let latest = st.history.iter().rev().find_map(|e| match &e.kind {
            EventKind::Evaluated {
                split,
                accuracy,
                macro_f1,
            } => Some(LatestMetrics {
                iteration: e.iteration,
                split: split.clone(),
                accuracy: *accuracy,
                macro_f1: *macro_f1,
            }),
            _ => None,
        });
        let pending = snap.queue.iter().filter(|i| i.status == ItemStatus::Pending).count();
        let s = &mut snap.status;
        s.phase = phase;
        s.iteration = st.iteration;
        s.remaining_budget = st.remaining_budget;
        s.budget = st.config.budget;
        s.batch = st.config.batch;
        s.strategy = st.config.strategy;
        s.class_counts = Some(ClassCountTable::of(&st.acquired(), &st.taxonomy));
        s.latest_metrics = latest;
        s.pending = pending;
        s.labeled_this_iteration = snap.queue.len() - pending;
        snap.taxonomy = Some(st.taxonomy.clone());
        snap.events = st.history.clone();
    });
}

fn fail(entry: &RunEntry, err: &Error) {
    log::error!("run {} failed: {err}", entry.id);
    entry.update(|snap| {
        snap.status.phase_history.push(PhaseChange {
            phase: Phase::Failed,
            iteration: snap.status.iteration,
        });
        snap.status.phase = Phase::Failed;
        snap.status.error = Some(err.to_string());
        snap.queue.clear();
        snap.status.pending = 0;
    });
}

fn persist(run: &Run, dir: &FsPath) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    run.checkpoint(dir.join("checkpoint.json"))?;
    run.write_events(dir.join("events.jsonl"))
}

fn worker(entry: Arc<RunEntry>, source: RunSource, rx: mpsc::Receiver<Command>, dir: PathBuf) {
    let run = match source {
        RunSource::Fresh {
            config,
            taxonomy,
            unlabeled,
            bootstrap,
            monitor,
        } => Run::init(*config, taxonomy, unlabeled, bootstrap, monitor),
        RunSource::Resume(path) => Run::resume(path),
    };
    let mut run = match run.and_then(|r| persist(&r, &dir).map(|_| r)) {
        Ok(r) => r,
        Err(e) => return fail(&entry, &e),
    };
    if let Err(e) = drive(&entry, &mut run, &rx, &dir) {
        fail(&entry, &e);
    }
    // Keep answering late submissions once the run has stopped.
    while let Ok(Command::Label {
        instance_id,
        label,
        reply,
    }) = rx.recv()
    {
        let _ = reply.send(settled(&entry, &instance_id, &label));
    }
}

fn settled(entry: &RunEntry, instance_id: &str, label: &str) -> LabelOutcome {
    match entry.read().accepted.get(instance_id) {
        Some(l) if l == label => LabelOutcome::Unchanged,
        Some(l) => LabelOutcome::Conflict(format!("`{instance_id}` is already labeled `{l}`")),
        None => LabelOutcome::Conflict(format!("`{instance_id}` is not pending")),
    }
}

fn drive(entry: &RunEntry, run: &mut Run, rx: &mpsc::Receiver<Command>, dir: &FsPath) -> Result<()> {
    loop {
        if !run.can_continue() {
            publish(entry, run, Phase::Finished, Some(Vec::new()));
            return Ok(());
        }
        publish(entry, run, Phase::Selecting, Some(Vec::new()));
        let ids = run.select_batch()?;
        let st = run.state();
        let items: Vec<AnnotationItem> = ids
            .iter()
            .map(|id| AnnotationItem {
                run_id: entry.id.clone(),
                instance_id: id.clone(),
                text: st.u.get(id).map(|i| i.text.clone()).unwrap_or_default(),
                candidate_classes: st.taxonomy.classes().to_vec(),
                selected_at: st.iteration,
                status: ItemStatus::Pending,
            })
            .collect();
        publish(entry, run, Phase::AwaitingLabels, Some(items));

        let mut got: HashMap<String, String> = HashMap::new();
        while got.len() < ids.len() {
            let Ok(Command::Label {
                instance_id,
                label,
                reply,
            }) = rx.recv()
            else {
                return Err(Error::invalid("service shut down"));
            };
            let outcome = if !run.state().taxonomy.contains(&label) {
                LabelOutcome::Invalid(format!("`{label}` is not in the taxonomy"))
            } else if let Some(prev) = got.get(&instance_id) {
                if *prev == label {
                    LabelOutcome::Unchanged
                } else {
                    LabelOutcome::Conflict(format!("`{instance_id}` is already labeled `{prev}`"))
                }
            } else if ids.contains(&instance_id) {
                got.insert(instance_id.clone(), label.clone());
                entry.update(|snap| {
                    if let Some(item) = snap.queue.iter_mut().find(|i| i.instance_id == instance_id) {
                        item.status = ItemStatus::Labeled;
                    }
                    snap.accepted.insert(instance_id.clone(), label.clone());
                    snap.status.pending -= 1;
                    snap.status.labeled_this_iteration += 1;
                });
                LabelOutcome::Accepted {
                    remaining: ids.len() - got.len(),
                }
            } else {
                settled(entry, &instance_id, &label)
            };
            let _ = reply.send(outcome);
        }

        let labels: Vec<(String, String)> = ids.iter().map(|id| (id.clone(), got[id].clone())).collect();
        run.apply_labels(&labels)?;
        publish(entry, run, Phase::Generating, None);
        run.generate()?;
        publish(entry, run, Phase::Retraining, None);
        run.retrain()?;
        run.finish_iteration()?;
        persist(run, dir)?;
    }
}

fn initial_snapshot(id: &str, config: &RunConfig) -> Snapshot {
    Snapshot {
        status: RunStatus {
            run_id: id.to_string(),
            phase: Phase::Initializing,
            iteration: 0,
            remaining_budget: config.budget,
            budget: config.budget,
            batch: config.batch,
            strategy: config.strategy,
            class_counts: None,
            latest_metrics: None,
            pending: 0,
            labeled_this_iteration: 0,
            phase_history: vec![PhaseChange {
                phase: Phase::Initializing,
                iteration: 0,
            }],
            error: None,
        },
        taxonomy: None,
        queue: Vec::new(),
        accepted: HashMap::new(),
        events: Vec::new(),
    }
}

impl AppState {
    fn spawn_run(&self, id: String, config: &RunConfig, source: RunSource, accepted: HashMap<String, String>) -> Arc<RunEntry> {
        let (tx, rx) = mpsc::channel();
        let mut snap = initial_snapshot(&id, config);
        snap.accepted = accepted;
        let entry = Arc::new(RunEntry {
            id: id.clone(),
            snapshot: RwLock::new(Arc::new(snap)),
            commands: Mutex::new(tx),
        });
        let dir = run_dir(&self.config.data_dir, &id);
        let worker_entry = entry.clone();
        std::thread::Builder::new()
            .name(format!("run-{id}"))
            .spawn(move || worker(worker_entry, source, rx, dir))
            .expect("spawn run worker");
        self.runs.write().expect("runs lock").insert(id, entry.clone());
        entry
    }

    fn get(&self, id: &str) -> Option<Arc<RunEntry>> {
        self.runs.read().expect("runs lock").get(id).cloned()
    }

    /// Picks up every checkpointed run under the data directory.
    fn resume_existing(&self) {
        let root = self.config.data_dir.join("runs");
        let Ok(dirs) = std::fs::read_dir(&root) else {
            return;
        };
        let mut found: Vec<PathBuf> = dirs.filter_map(|d| d.ok().map(|d| d.path())).collect();
        found.sort();
        for dir in found {
            let ck = dir.join("checkpoint.json");
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            let state = match std::fs::read_to_string(&ck).map_err(|e| Error::io(&ck, e)).and_then(|raw| crate::orchestrate::parse_checkpoint(&raw)) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping {}: {e}", dir.display());
                    continue;
                }
            };
            if let Some(n) = id.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                self.next_id.fetch_max(n + 1, Ordering::SeqCst);
            }
            let accepted = state
                .l
                .iter()
                .filter(|i| i.origin == crate::corpus::Origin::Human)
                .filter_map(|i| i.label.clone().map(|l| (i.id.clone(), l)))
                .collect();
            log::info!("resuming {id} at iteration {}", state.iteration);
            self.spawn_run(id, &state.config, RunSource::Resume(ck), accepted);
        }
    }
}

fn error_body(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn field_errors(errors: Vec<FieldError>) -> Response {
    let message = errors
        .iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ");
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({ "error": message, "errors": errors })),
    )
        .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusPaths {
    unlabeled: PathBuf,
    bootstrap: PathBuf,
    #[serde(default)]
    taxonomy: Option<PathBuf>,
    #[serde(default)]
    monitor: Option<PathBuf>,
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.token {
        let ok = req
            .headers()
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return error_body(StatusCode::UNAUTHORIZED, "missing or invalid bearer token");
        }
    }
    next.run(req).await
}

async fn create_run(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let doc: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, format!("body is not JSON: {e}")),
    };
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| doc.get("idempotency_key").and_then(Value::as_str).map(str::to_string));
    if let Some(k) = &key {
        if let Some(id) = state.idempotency.lock().expect("idempotency lock").get(k) {
            return (StatusCode::OK, Json(json!({ "run_id": id }))).into_response();
        }
    }

    let config_doc = doc.get("config").cloned().unwrap_or_else(|| json!({}));
    let mut config: RunConfig = match serde_path_to_error::deserialize(config_doc) {
        Ok(c) => c,
        Err(e) => {
            let field = e.path().to_string();
            return field_errors(vec![FieldError {
                field,
                message: e.into_inner().to_string(),
            }]);
        }
    };
    config.annotator = AnnotatorKind::Service;
    let errors = config.validate();
    if !errors.is_empty() {
        return field_errors(errors);
    }
    let corpus: CorpusPaths = match doc.get("corpus").cloned().map(serde_json::from_value) {
        Some(Ok(c)) => c,
        Some(Err(e)) => {
            return field_errors(vec![FieldError {
                field: "corpus".into(),
                message: e.to_string(),
            }])
        }
        None => {
            return field_errors(vec![FieldError {
                field: "corpus".into(),
                message: "required".into(),
            }])
        }
    };
    let paths = [Some(&corpus.unlabeled), Some(&corpus.bootstrap), corpus.taxonomy.as_ref(), corpus.monitor.as_ref()];
    if let Some(missing) = paths.into_iter().flatten().find(|p| !p.is_file()) {
        return error_body(StatusCode::NOT_FOUND, format!("corpus file not found: {}", missing.display()));
    }

    let loaded = tokio::task::spawn_blocking(move || -> Result<(Taxonomy, Pool, Pool, Option<Pool>)> {
        let taxonomy = match &corpus.taxonomy {
            Some(p) => Taxonomy::load(p)?,
            None => Taxonomy::safety_default(),
        };
        let unlabeled = load_jsonl(&corpus.unlabeled, &taxonomy)?;
        let bootstrap = load_jsonl(&corpus.bootstrap, &taxonomy)?;
        let monitor = corpus.monitor.as_ref().map(|p| load_jsonl(p, &taxonomy)).transpose()?;
        Ok((taxonomy, unlabeled, bootstrap, monitor))
    })
    .await
    .expect("corpus loader panicked");
    let (taxonomy, unlabeled, bootstrap, monitor) = match loaded {
        Ok(l) => l,
        Err(e) => {
            return field_errors(vec![FieldError {
                field: "corpus".into(),
                message: e.to_string(),
            }])
        }
    };
    if unlabeled.len() < config.budget {
        return field_errors(vec![FieldError {
            field: "budget".into(),
            message: format!("budget exceeds pool: B={} but |U|={}", config.budget, unlabeled.len()),
        }]);
    }

    let mut idem = state.idempotency.lock().expect("idempotency lock");
    if let Some(id) = key.as_ref().and_then(|k| idem.get(k)) {
        return (StatusCode::OK, Json(json!({ "run_id": id }))).into_response();
    }
    let id = format!("run-{:04}", state.next_id.fetch_add(1, Ordering::SeqCst));
    if let Some(k) = key {
        idem.insert(k, id.clone());
    }
    drop(idem);
    let source = RunSource::Fresh {
        config: Box::new(config.clone()),
        taxonomy,
        unlabeled,
        bootstrap,
        monitor,
    };
    state.spawn_run(id.clone(), &config, source, HashMap::new());
    (StatusCode::CREATED, Json(json!({ "run_id": id }))).into_response()
}

fn not_found(id: &str) -> Response {
    error_body(StatusCode::NOT_FOUND, format!("no run `{id}`"))
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Response {
    let mut ids: Vec<String> = state.runs.read().expect("runs lock").keys().cloned().collect();
    ids.sort();
    Json(json!({ "runs": ids })).into_response()
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        Some(e) => Json(e.read().status.clone()).into_response(),
        None => not_found(&id),
    }
}

async fn get_queue(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(entry) = state.get(&id) else {
        return not_found(&id);
    };
    let snap = entry.read();
    let items: Vec<&AnnotationItem> = if snap.status.phase == Phase::AwaitingLabels {
        snap.queue.iter().filter(|i| i.status == ItemStatus::Pending).collect()
    } else {
        Vec::new()
    };
    Json(json!({ "run_id": id, "phase": snap.status.phase, "iteration": snap.status.iteration, "items": items }))
        .into_response()
}

#[derive(Deserialize)]
struct LabelRequest {
    instance_id: String,
    label: String,
}

async fn post_label(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(entry) = state.get(&id) else {
        return not_found(&id);
    };
    let req: LabelRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_body(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid label request: {e}")),
    };
    let snap = entry.read();
    if let Some(tax) = &snap.taxonomy {
        if !tax.contains(&req.label) {
            return error_body(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("`{}` is not in the taxonomy (classes: {})", req.label, tax.classes().join(", ")),
            );
        }
    }
    let pending = snap.status.phase == Phase::AwaitingLabels
        && snap.queue.iter().any(|i| i.instance_id == req.instance_id && i.status == ItemStatus::Pending);
    let outcome = if pending {
        let (tx, rx) = oneshot::channel();
        let sent = entry.commands.lock().expect("command lock").send(Command::Label {
            instance_id: req.instance_id.clone(),
            label: req.label.clone(),
            reply: tx,
        });
        if sent.is_err() {
            return error_body(StatusCode::CONFLICT, "run is no longer accepting labels");
        }
        match rx.await {
            Ok(o) => o,
            Err(_) => return error_body(StatusCode::CONFLICT, "run is no longer accepting labels"),
        }
    } else {
        settled(&entry, &req.instance_id, &req.label)
    };
    match outcome {
        LabelOutcome::Accepted { remaining } => Json(json!({
            "accepted": true, "instance_id": req.instance_id, "label": req.label, "remaining": remaining
        }))
        .into_response(),
        LabelOutcome::Unchanged => Json(json!({
            "accepted": true, "instance_id": req.instance_id, "label": req.label, "unchanged": true
        }))
        .into_response(),
        LabelOutcome::Conflict(m) => error_body(StatusCode::CONFLICT, m),
        LabelOutcome::Invalid(m) => error_body(StatusCode::UNPROCESSABLE_ENTITY, m),
    }
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(entry) = state.get(&id) else {
        return not_found(&id);
    };
    let snap = entry.read();
    let evaluations: Vec<Value> = snap
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Evaluated {
                split,
                accuracy,
                macro_f1,
            } => Some(json!({ "iteration": e.iteration, "split": split, "accuracy": accuracy, "macro_f1": macro_f1 })),
            _ => None,
        })
        .collect();
    let s = &snap.status;
    Json(json!({
        "run_id": id,
        "iteration": s.iteration,
        "class_counts": s.class_counts,
        "class_count_stddev": s.class_counts.as_ref().and_then(|c| c.stddev),
        "latest": s.latest_metrics,
        "evaluations": evaluations,
    }))
    .into_response()
}

#[derive(Deserialize)]
struct EventQuery {
    since: Option<u64>,
    limit: Option<usize>,
}

async fn get_events(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<EventQuery>) -> Response {
    let Some(entry) = state.get(&id) else {
        return not_found(&id);
    };
    let snap = entry.read();
    let since = q.since.unwrap_or(0);
    let events: Vec<&Event> = snap
        .events
        .iter()
        .filter(|e| e.seq >= since)
        .take(q.limit.unwrap_or(1000))
        .collect();
    Json(json!({ "run_id": id, "events": events })).into_response()
}

async fn health() -> Response {
    Json(json!({ "status": "ok" })).into_response()
}

/// The `/v1` router. Resumes checkpointed runs found in the data directory.
pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        config,
        runs: RwLock::new(HashMap::new()),
        idempotency: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
    });
    state.resume_existing();
    let api = Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/queue", get(get_queue))
        .route("/runs/{id}/labels", post(post_label))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/events", get(get_events))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth))
        .route("/health", get(health))
        .with_state(state);
    Router::new().nest("/v1", api)
}

/// Serves until the process exits.
pub fn serve_blocking(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::invalid(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::invalid(format!("bind {addr}: {e}")))?;
        log::info!("listening on {}", listener.local_addr().map_or(addr, |a| a));
        axum::serve(listener, router(config))
            .await
            .map_err(|e| Error::invalid(format!("server: {e}")))
    })
}

/// A server running on a background thread; stopped on drop.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn(config: ServiceConfig, addr: SocketAddr) -> Result<ServiceHandle> {
    let (ready_tx, ready_rx) = mpsc::channel();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("alguide-service".into())
        .spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = ready_tx.send(Err(format!("bind {addr}: {e}")));
                        return;
                    }
                };
                let _ = ready_tx.send(listener.local_addr().map_err(|e| e.to_string()));
                let _ = axum::serve(listener, router(config))
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await;
            });
        })
        .map_err(|e| Error::invalid(format!("spawn service: {e}")))?;
    let addr = ready_rx
        .recv()
        .map_err(|_| Error::invalid("service thread exited"))?
        .map_err(Error::invalid)?;
    Ok(ServiceHandle {
        addr,
        shutdown: Some(stop_tx),
        thread: Some(thread),
    })
}
