use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chitchat_core::mining::{
    apply_decision_set, check_decision, AnnotationBatch, AnnotationDecision, AnnotationError, MiningMode,
};
use chitchat_core::pipeline::{UnderstandResponse, SCHEMA_VERSION};
use chitchat_core::store::StoreDiff;
use chitchat_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::state::AppState;

/// Exported batches carry every member query, so uploads get a larger cap
/// than understand requests.
const BATCH_BODY_BYTES: usize = 64 << 20;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config().max_body_bytes;
    let mut app = Router::new()
        .route("/v1/understand", post(understand))
        .route("/v1/health", get(health))
        .route("/v1/version", get(version))
        .route("/v1/admin/reload", post(reload))
        .route(
            "/v1/annotation/batches",
            get(list_batches).post(upload_batch).layer(DefaultBodyLimit::max(BATCH_BODY_BYTES)),
        )
        .route("/v1/annotation/batches/{id}", get(get_batch))
        .route("/v1/annotation/batches/{id}/decisions", post(submit_decisions))
        .route("/v1/annotation/batches/{id}/apply", post(apply_batch))
        .layer(DefaultBodyLimit::max(limit));
    let origins: Vec<HeaderValue> = state
        .config()
        .cors_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    app.with_state(state)
}

/// JSON error body: `{"error": {"code", "message", "details"?}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "not_loaded", "models or store snapshot not loaded")
    }

    fn unknown_batch(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_batch", format!("batch `{id}` not found"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(m) => Self::bad_request(m),
            Error::Annotation(a) => a.into(),
            Error::Moderation(m) => Self::new(StatusCode::BAD_GATEWAY, "moderation_unavailable", m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let (status, code, details) = match &e {
            AnnotationError::Conflict(id) => (StatusCode::CONFLICT, "conflict", Some(json!({ "cluster_id": id }))),
            AnnotationError::DuplicateName(n) => (StatusCode::CONFLICT, "duplicate_name", Some(json!({ "intent_name": n }))),
            AnnotationError::Undecided(ids) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "undecided", Some(json!({ "undecided": ids })))
            }
            AnnotationError::MergeTargetNotChosen { cluster, target } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "merge_target_not_chosen",
                Some(json!({ "cluster_id": cluster, "target": target })),
            ),
            AnnotationError::UnknownCluster(id) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unknown_cluster", Some(json!({ "cluster_id": id })))
            }
            AnnotationError::MissingReason(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_reason", None),
            AnnotationError::InvalidName(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_name", None),
            AnnotationError::BatchMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "batch_mismatch", None),
        };
        Self {
            status,
            code,
            message: e.to_string(),
            details,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|e| match e {
        BytesRejection::FailedToBufferBody(_) => ApiError::bad_request("request body exceeds the size limit"),
        other => ApiError::bad_request(other.body_text()),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnderstandRequest {
    text: String,
    #[serde(default)]
    trace: bool,
}

async fn understand(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<UnderstandResponse> {
    let req: UnderstandRequest = parse_body(body)?;
    let engine = state.engine().ok_or_else(ApiError::not_loaded)?;
    let resp = tokio::task::spawn_blocking(move || engine.understand(&req.text, req.trace))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(resp))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.engine() {
        Some(e) => Json(json!({ "status": "ok", "store_version": e.store_version() })).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VersionInfo {
    pub service_version: String,
    pub schema_version: u32,
    pub store_version: u64,
    pub store_content_hash: String,
    pub intents: usize,
    pub curated_queries: usize,
    pub semantic_provider: String,
    pub generic_classes: Vec<String>,
}

async fn version(State(state): State<Arc<AppState>>) -> ApiResult<VersionInfo> {
    let e = state.engine().ok_or_else(ApiError::not_loaded)?;
    Ok(Json(VersionInfo {
        service_version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION,
        store_version: e.store_version(),
        store_content_hash: e.snapshot().content_hash.clone(),
        intents: e.snapshot().content.intents.len(),
        curated_queries: e.index().curated_count(),
        semantic_provider: e.domain_model().summary.semantic_provider.clone(),
        generic_classes: e.generic_model().class_ids.clone(),
    }))
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult<Value> {
    let v = state.reload().await?;
    Ok(Json(json!({ "store_version": v })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_id: String,
    pub mode: MiningMode,
    pub clusters: usize,
    pub decided: usize,
}

fn load_batch(state: &AppState, id: &str) -> Result<AnnotationBatch, ApiError> {
    match state.store().load_batch(id) {
        Ok(Some(b)) => Ok(b),
        Ok(None) | Err(Error::InvalidInput(_)) => Err(ApiError::unknown_batch(id)),
        Err(e) => Err(e.into()),
    }
}

async fn list_batches(State(state): State<Arc<AppState>>) -> ApiResult<Vec<BatchSummary>> {
    let store = state.store();
    let mut out = Vec::new();
    for id in store.batch_ids()? {
        let b = load_batch(&state, &id)?;
        let decided = store.load_decisions(&id)?.decisions.len();
        out.push(BatchSummary {
            batch_id: id,
            mode: b.mode,
            clusters: b.clusters.len(),
            decided,
        });
    }
    Ok(Json(out))
}

async fn upload_batch(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<BatchSummary>), ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let batch = AnnotationBatch::from_json(text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let _guard = state.write_lock().await;
    state.store().save_batch(&batch)?;
    Ok((
        StatusCode::CREATED,
        Json(BatchSummary {
            batch_id: batch.batch_id.clone(),
            mode: batch.mode,
            clusters: batch.clusters.len(),
            decided: state.store().load_decisions(&batch.batch_id)?.decisions.len(),
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchView {
    pub batch: AnnotationBatch,
    pub decisions: Vec<AnnotationDecision>,
    pub undecided: Vec<u32>,
}

fn undecided(batch: &AnnotationBatch, decisions: &[AnnotationDecision]) -> Vec<u32> {
    let done: BTreeSet<u32> = decisions.iter().map(|d| d.cluster_id).collect();
    batch
        .clusters
        .iter()
        .map(|c| c.cluster_id)
        .filter(|id| !done.contains(id))
        .collect()
}

async fn get_batch(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<BatchView> {
    let batch = load_batch(&state, &id)?;
    let decisions = state.store().load_decisions(&id)?.decisions;
    Ok(Json(BatchView {
        undecided: undecided(&batch, &decisions),
        batch,
        decisions,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionSubmission {
    decisions: Vec<AnnotationDecision>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionReceipt {
    pub batch_id: String,
    pub recorded: usize,
    pub decided: usize,
    pub undecided: Vec<u32>,
}

/// Validates every submitted decision against those already recorded and
/// persists them all, or none.
async fn submit_decisions(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<DecisionReceipt> {
    let batch = load_batch(&state, &id)?;
    let sub: DecisionSubmission = parse_body(body)?;
    let _guard = state.write_lock().await;
    let mut set = state.store().load_decisions(&id)?;
    let mut recorded = 0;
    for d in sub.decisions {
        check_decision(&batch, &set.decisions, &d)?;
        if !set.decisions.contains(&d) {
            set.decisions.push(d);
            recorded += 1;
        }
    }
    set.decisions.sort_by_key(|d| d.cluster_id);
    state.store().save_decisions(&set)?;
    Ok(Json(DecisionReceipt {
        batch_id: id,
        recorded,
        decided: set.decisions.len(),
        undecided: undecided(&batch, &set.decisions),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApplyReceipt {
    pub batch_id: String,
    pub version: u64,
    pub parent_version: Option<u64>,
    pub diff: StoreDiff,
    pub reloaded: bool,
}

async fn apply_batch(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ApplyReceipt> {
    let batch = load_batch(&state, &id)?;
    let _guard = state.write_lock().await;
    let set = state.store().load_decisions(&id)?;
    let outcome = apply_decision_set(&batch, &set)?;
    let st = state.clone();
    let (snapshot, diff) = tokio::task::spawn_blocking(move || st.store().apply_outcome(outcome, Some(st.analyzer())))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let mut reloaded = false;
    if state.config().reload_after_apply && state.config().store_version.is_none() {
        match state.reload_locked().await {
            Ok(_) => reloaded = true,
            Err(e) => tracing::warn!(error = %e, "applied snapshot could not be loaded"),
        }
    }
    Ok(Json(ApplyReceipt {
        batch_id: id,
        version: snapshot.version,
        parent_version: snapshot.parent_version,
        diff,
        reloaded,
    }))
}
