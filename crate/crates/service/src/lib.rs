//! HTTP/JSON API over a prediction run directory.
//!
//! Endpoints:
//!
//! * `GET /outages?offset=&limit=`: outage list sorted by id.
//! * `GET /outages/{id}/layers`: GeoJSON layers, with an `ETag`.
//! * `POST /outages/{id}/predict`: re-predict with `{eps_m, min_pts}` or
//!   `{auto: true, seed}` (an empty body means auto with the run's seed).
//! * `POST /outages/{id}/verdict`: record `{verdict, reviewer, note}`.
//! * `GET /outages/{id}/verdicts`: verdict history for one outage.
//! * `GET /stats`: `{n_verified, n_accurate, accuracy}`.
//!
//! Writes go to `store.jsonl` in the run directory and are replayed on
//! start-up, so a restarted server serves the same state.

pub mod store;

use std::collections::{BTreeMap, HashSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use faultloc::cluster::{dbscan, ClusterAssignment, DbscanParams};
use faultloc::eval::{export_layers, parse_predictions, PredictionRecord};
use faultloc::ingest::{format_timestamp, OutageContext};
use faultloc::optimize::{OptimizerConfig, Prediction};
use faultloc::run::{
    build_contexts, load_inputs, predict_auto, predict_manual, replay, unclustered, OutageResult, RunConfig, RunError,
    PREDICTIONS_FILE,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use crate::store::{PredictionEntry, Stats, Store, StoreError, StoreRecord, Verdict, VerdictBook, VerificationVerdict, STORE_FILE};

/// Longest accepted verdict note, in characters.
pub const MAX_NOTE_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Ingest(#[from] faultloc::ingest::IngestError),
    #[error("store references unknown outage `{0}`")]
    UnknownOutage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Current prediction state of one outage.
#[derive(Debug, Clone)]
struct Entry {
    prediction: Option<Prediction>,
    failure_reason: Option<String>,
    assignment: ClusterAssignment,
    etag: String,
}

impl Entry {
    fn new(prediction: Option<Prediction>, failure_reason: Option<String>, assignment: ClusterAssignment) -> Self {
        let etag = etag_for(&prediction, &failure_reason);
        Self {
            prediction,
            failure_reason,
            assignment,
            etag,
        }
    }

    fn from_result(r: OutageResult) -> Self {
        match r.result {
            Ok(p) => Self::new(Some(p), None, r.assignment),
            Err(e) => Self::new(None, Some(e.reason().to_string()), r.assignment),
        }
    }
}

fn etag_for(prediction: &Option<Prediction>, failure_reason: &Option<String>) -> String {
    let body = serde_json::to_vec(&(prediction, failure_reason)).expect("prediction serializes");
    let digest = Sha256::digest(&body);
    let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
    format!("\"{hex}\"")
}

#[derive(Debug, Default)]
struct Live {
    entries: BTreeMap<String, Entry>,
    verdicts: VerdictBook,
}

impl Live {
    fn apply(&mut self, contexts: &BTreeMap<String, OutageContext>, record: StoreRecord) -> Result<(), ServiceError> {
        match record {
            StoreRecord::Prediction(p) => {
                let ctx = contexts.get(&p.outage_id).ok_or_else(|| ServiceError::UnknownOutage(p.outage_id.clone()))?;
                let assignment = match (&p.params, &p.prediction) {
                    (_, Some(pred)) => dbscan(&positions(ctx), pred.params),
                    (Some(params), None) => dbscan(&positions(ctx), *params),
                    (None, None) => unclustered(ctx.pings.len(), DbscanParams { eps_m: 1.0, min_pts: 1 }),
                };
                self.entries.insert(p.outage_id, Entry::new(p.prediction, p.failure_reason, assignment));
            }
            StoreRecord::Verdict(v) => {
                if !contexts.contains_key(&v.outage_id) {
                    return Err(ServiceError::UnknownOutage(v.outage_id));
                }
                self.verdicts.record(v);
            }
        }
        Ok(())
    }
}

fn positions(ctx: &OutageContext) -> Vec<faultloc::geo::GeoPoint> {
    ctx.pings.iter().map(|p| p.position).collect()
}

/// Shared server state.
#[derive(Debug)]
pub struct AppState {
    contexts: BTreeMap<String, OutageContext>,
    optimizer: OptimizerConfig,
    live: RwLock<Live>,
    store: Mutex<Store>,
    running: Mutex<HashSet<String>>,
}

/// Marks an outage as having a prediction in progress until dropped.
pub struct PredictClaim {
    state: Arc<AppState>,
    outage_id: String,
}

impl Drop for PredictClaim {
    fn drop(&mut self) {
        self.state.running.lock().expect("lock").remove(&self.outage_id);
    }
}

impl AppState {
    /// Loads a run directory written by `faultloc predict` and replays its store.
    pub fn load(run_dir: &Path) -> Result<Arc<Self>, ServiceError> {
        let cfg = RunConfig::load(run_dir)?;
        let inputs = load_inputs(&cfg)?;
        let contexts: BTreeMap<String, OutageContext> = build_contexts(&inputs, &cfg.context)?
            .into_iter()
            .map(|c| (c.outage.outage_id.clone(), c))
            .collect();

        let mut baseline: BTreeMap<String, PredictionRecord> = BTreeMap::new();
        let pred_path = run_dir.join(PREDICTIONS_FILE);
        if pred_path.exists() {
            let parsed = parse_predictions(std::fs::File::open(&pred_path)?)?;
            if let Some(row) = parsed.errors.first() {
                return Err(RunError::MalformedRows {
                    file: pred_path,
                    rows: vec![row.clone()],
                }
                .into());
            }
            baseline = parsed.records.into_iter().map(|r| (r.outage_id.clone(), r)).collect();
        }

        let mut live = Live::default();
        for (id, ctx) in &contexts {
            let entry = match baseline.get(id) {
                Some(rec) => Entry::from_result(replay(ctx, rec, &cfg.optimizer)),
                None => Entry::new(
                    None,
                    Some("no_prediction".into()),
                    unclustered(ctx.pings.len(), DbscanParams { eps_m: 1.0, min_pts: 1 }),
                ),
            };
            live.entries.insert(id.clone(), entry);
        }

        let (store, records) = Store::open(&run_dir.join(STORE_FILE))?;
        for r in records {
            live.apply(&contexts, r)?;
        }
        Ok(Arc::new(Self {
            contexts,
            optimizer: cfg.optimizer,
            live: RwLock::new(live),
            store: Mutex::new(store),
            running: Mutex::new(HashSet::new()),
        }))
    }

    /// Claims the per-outage prediction slot, or `None` if one is running.
    pub fn try_claim(self: &Arc<Self>, outage_id: &str) -> Option<PredictClaim> {
        let mut running = self.running.lock().expect("lock");
        running.insert(outage_id.to_string()).then(|| PredictClaim {
            state: Arc::clone(self),
            outage_id: outage_id.to_string(),
        })
    }

    fn commit(&self, record: StoreRecord) -> Result<(), ServiceError> {
        let mut store = self.store.lock().expect("lock");
        store.append(&record)?;
        self.live.write().expect("lock").apply(&self.contexts, record)
    }

    pub fn stats(&self) -> Stats {
        self.live.read().expect("lock").verdicts.stats()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/outages", get(list_outages))
        .route("/outages/{id}/layers", get(layers))
        .route("/outages/{id}/predict", post(predict))
        .route("/outages/{id}/verdict", post(verdict))
        .route("/outages/{id}/verdicts", get(verdicts))
        .route("/stats", get(stats))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr`, prints `listening on http://<addr>` and serves until Ctrl-C.
pub async fn serve(run_dir: &Path, addr: SocketAddr) -> Result<(), ServiceError> {
    let state = AppState::load(run_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    log::error!("{e}");
    error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown outage `{id}`"))
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize)]
struct OutageItem<'a> {
    outage_id: &'a str,
    start: String,
    end: String,
    has_prediction: bool,
    confidence: Option<f64>,
    latest_verdict: Option<Verdict>,
}

async fn list_outages(State(state): State<Arc<AppState>>, Query(page): Query<Page>) -> Response {
    let live = state.live.read().expect("lock");
    let items: Vec<OutageItem> = state
        .contexts
        .iter()
        .skip(page.offset.unwrap_or(0))
        .take(page.limit.unwrap_or(usize::MAX))
        .map(|(id, ctx)| {
            let entry = &live.entries[id];
            OutageItem {
                outage_id: id,
                start: format_timestamp(&ctx.outage.start_time),
                end: format_timestamp(&ctx.outage.end_time),
                has_prediction: entry.prediction.is_some(),
                confidence: entry.prediction.as_ref().map(|p| p.confidence),
                latest_verdict: live.verdicts.latest_for(id),
            }
        })
        .collect();
    Json(items).into_response()
}

fn with_etag(mut response: Response, etag: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(etag) {
        response.headers_mut().insert(header::ETAG, v);
    }
    response
}

async fn layers(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    let Some(ctx) = state.contexts.get(&id) else {
        return not_found(&id);
    };
    let live = state.live.read().expect("lock");
    let entry = &live.entries[&id];
    let fresh = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == entry.etag);
    if fresh {
        return with_etag(StatusCode::NOT_MODIFIED.into_response(), &entry.etag);
    }
    let body = export_layers(ctx, entry.prediction.as_ref(), &entry.assignment);
    with_etag(Json(body).into_response(), &entry.etag)
}

enum PredictRequest {
    Manual(DbscanParams),
    Auto(u64),
}

fn parse_predict_body(body: &[u8], default_seed: u64) -> Result<PredictRequest, String> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(PredictRequest::Auto(default_seed));
    }
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = v.as_object().ok_or("body must be a JSON object")?;
    let auto = match obj.get("auto") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err("`auto` must be a boolean".into()),
    };
    let manual = obj.contains_key("eps_m") || obj.contains_key("min_pts");
    if auto && manual {
        return Err("give either `auto` or `eps_m`/`min_pts`, not both".into());
    }
    if manual {
        let eps_m = obj.get("eps_m").and_then(Value::as_f64).ok_or("`eps_m` must be a number")?;
        let min_pts = obj
            .get("min_pts")
            .and_then(Value::as_u64)
            .ok_or("`min_pts` must be a positive integer")?;
        return DbscanParams::new(eps_m, min_pts as usize)
            .map(PredictRequest::Manual)
            .map_err(|e| e.to_string());
    }
    let seed = match obj.get("seed") {
        None => default_seed,
        Some(s) => s.as_u64().ok_or("`seed` must be a non-negative integer")?,
    };
    Ok(PredictRequest::Auto(seed))
}

async fn predict(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    if !state.contexts.contains_key(&id) {
        return not_found(&id);
    }
    let request = match parse_predict_body(&body, state.optimizer.seed) {
        Ok(r) => r,
        Err(msg) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg),
    };
    let Some(claim) = state.try_claim(&id) else {
        return error(StatusCode::CONFLICT, format!("a prediction for `{id}` is already running"));
    };
    let worker = Arc::clone(&state);
    let job = tokio::task::spawn_blocking(move || {
        let _claim = claim;
        let ctx = &worker.contexts[&id];
        let (params, result) = match request {
            PredictRequest::Manual(params) => (Some(params), predict_manual(ctx, params, &worker.optimizer)),
            PredictRequest::Auto(seed) => {
                let cfg = OptimizerConfig { seed, ..worker.optimizer };
                (None, predict_auto(ctx, &cfg))
            }
        };
        let entry = Entry::from_result(result);
        let record = PredictionEntry {
            outage_id: id.clone(),
            params: params.or(entry.prediction.as_ref().map(|p| p.params)),
            prediction: entry.prediction.clone(),
            failure_reason: entry.failure_reason.clone(),
        };
        worker.commit(StoreRecord::Prediction(record))?;
        Ok::<_, ServiceError>((id, entry))
    });
    match job.await {
        Ok(Ok((id, entry))) => {
            let body = json!({
                "outage_id": id,
                "prediction": entry.prediction,
                "failure_reason": entry.failure_reason,
                "etag": entry.etag,
            });
            with_etag(Json(body).into_response(), &entry.etag)
        }
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

fn parse_verdict_body(id: &str, body: &[u8]) -> Result<VerificationVerdict, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let verdict = v
        .get("verdict")
        .and_then(Value::as_str)
        .and_then(Verdict::parse)
        .ok_or("`verdict` must be one of accurate, inaccurate, unsure")?;
    let reviewer = v
        .get("reviewer")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .ok_or("`reviewer` must be a non-empty string")?;
    let note = match v.get("note") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.chars().count() <= MAX_NOTE_CHARS => Some(s.clone()),
        Some(Value::String(_)) => return Err(format!("`note` is longer than {MAX_NOTE_CHARS} characters")),
        Some(_) => return Err("`note` must be a string".into()),
    };
    Ok(VerificationVerdict {
        outage_id: id.to_string(),
        verdict,
        reviewer: reviewer.to_string(),
        note,
        time: Utc::now(),
    })
}

async fn verdict(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    if !state.contexts.contains_key(&id) {
        return not_found(&id);
    }
    let record = match parse_verdict_body(&id, &body) {
        Ok(r) => r,
        Err(msg) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg),
    };
    let worker = Arc::clone(&state);
    let stored = record.clone();
    match tokio::task::spawn_blocking(move || worker.commit(StoreRecord::Verdict(stored))).await {
        Ok(Ok(())) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn verdicts(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    if !state.contexts.contains_key(&id) {
        return not_found(&id);
    }
    let live = state.live.read().expect("lock");
    Json(live.verdicts.history(&id)).into_response()
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    Json(state.stats()).into_response()
}
