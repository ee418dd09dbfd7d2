//! JSON-over-HTTP curation service.
//!
//! Libraries travel as SDF documents in a `library` field, or as
//! hierarchy text in a `text` field. Errors carry `{code, message, detail}`.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use shield_core::ingest::{baseline_extract, Document, ExtractedEvent, Gazetteer};
use shield_core::merge::merge_with_report;
use shield_core::metric::{report, MetricReport, SearchConfig};
use shield_core::pipeline::{node_set_prf, run_stored, PipelineError, PipelineRun, RunRequest, DEFAULT_GAZETTEER};
use shield_core::schema::sdf::{parse_sdf_value, to_sdf_value};
use shield_core::schema::{parse_hierarchy_text, EventId, SchemaLibrary};
use shield_core::store::{StoreError, StoredSchema, Store};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub metric: SearchConfig,
    pub ui_dir: PathBuf,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: Value::Null }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "detail": self.detail});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            StoreError::Locked { holder, expires_at } => ApiError {
                detail: json!({"holder": holder, "expires_at": expires_at}),
                ..ApiError::new(StatusCode::CONFLICT, "locked", message)
            },
            StoreError::BadToken => ApiError::new(StatusCode::FORBIDDEN, "bad_token", message),
            StoreError::ValidationFailed(report) => ApiError {
                detail: serde_json::to_value(&report).unwrap_or(Value::Null),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_failed", message)
            },
            StoreError::InvalidId(_) => ApiError::bad_request(message),
            StoreError::Io(_) | StoreError::Corrupt { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", message)
            }
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            PipelineError::StageFailure { stage, .. } => ApiError {
                detail: json!({"stage": stage}),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "stage_failure", message)
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(ApiError::from)
}

/// Where a library comes from in a request body.
#[derive(Debug, Default, Deserialize)]
pub struct LibraryInput {
    pub library: Option<Value>,
    pub text: Option<String>,
}

impl LibraryInput {
    fn resolve(self) -> Result<SchemaLibrary, ApiError> {
        match (self.library, self.text) {
            (Some(v), _) => parse_sdf_value(v).map_err(|e| ApiError::bad_request(format!("bad SDF: {e}"))),
            (None, Some(t)) => match parse_hierarchy_text(&t) {
                Ok(p) if p.blocks == 0 => Err(ApiError::bad_request("hierarchy text holds no schema")),
                Ok(p) => Ok(p.library),
                Err(e) => Err(ApiError::bad_request(format!("bad hierarchy text: {e}"))),
            },
            (None, None) => Err(ApiError::bad_request("need a library or text field")),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SchemaView {
    pub id: String,
    pub version: u32,
    pub latest_version: u32,
    pub library: Value,
    pub history: Vec<shield_core::store::HistoryEntry>,
    pub lock: Option<shield_core::store::LockInfo>,
}

impl From<StoredSchema> for SchemaView {
    fn from(s: StoredSchema) -> Self {
        Self {
            id: s.id,
            version: s.version,
            latest_version: s.latest_version,
            library: to_sdf_value(&s.library),
            history: s.history,
            lock: s.lock,
        }
    }
}

#[derive(Deserialize)]
struct CreateSchema {
    #[serde(flatten)]
    input: LibraryInput,
    #[serde(default)]
    editor: Option<String>,
}

async fn create_schema(
    State(st): State<AppState>,
    payload: Result<Json<CreateSchema>, JsonRejection>,
) -> Result<(StatusCode, Json<SchemaView>), ApiError> {
    let req = body(payload)?;
    let lib = req.input.resolve()?;
    let editor = req.editor.unwrap_or_else(|| "anonymous".into());
    let stored = st.store.create_schema(&lib, &editor)?;
    Ok((StatusCode::CREATED, Json(stored.into())))
}

async fn list_schemas(State(st): State<AppState>) -> ApiResult<Vec<String>> {
    Ok(Json(st.store.list_schemas()?))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_schema(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<SchemaView> {
    Ok(Json(st.store.get_schema(&id, q.version)?.into()))
}

#[derive(Deserialize)]
struct PutSchema {
    #[serde(flatten)]
    input: LibraryInput,
    token: String,
    #[serde(default)]
    keep_lock: bool,
}

async fn put_schema(
    State(st): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<PutSchema>, JsonRejection>,
) -> ApiResult<shield_core::store::PutOutcome> {
    let req = body(payload)?;
    let lib = req.input.resolve()?;
    Ok(Json(st.store.put_schema(&id, &lib, &req.token, req.keep_lock)?))
}

#[derive(Deserialize)]
struct LockRequest {
    holder: String,
}

async fn acquire_lock(
    State(st): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<LockRequest>, JsonRejection>,
) -> ApiResult<shield_core::store::LockGrant> {
    let req = body(payload)?;
    Ok(Json(st.store.acquire_lock(&id, &req.holder)?))
}

#[derive(Deserialize)]
struct ReleaseRequest {
    token: String,
}

async fn release_lock(
    State(st): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ReleaseRequest>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let req = body(payload)?;
    st.store.release_lock(&id, &req.token)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct MergeRequest {
    #[serde(default)]
    schema_ids: Vec<String>,
    #[serde(default)]
    libraries: Vec<Value>,
    /// Store the result as a new schema.
    #[serde(default)]
    save: bool,
    #[serde(default)]
    editor: Option<String>,
}

async fn merge_schemas(
    State(st): State<AppState>,
    payload: Result<Json<MergeRequest>, JsonRejection>,
) -> ApiResult<Value> {
    let req = body(payload)?;
    let mut libs = Vec::new();
    for id in &req.schema_ids {
        libs.push(st.store.get_schema(id, None)?.library);
    }
    for v in req.libraries {
        libs.push(LibraryInput { library: Some(v), text: None }.resolve()?);
    }
    if libs.is_empty() {
        return Err(ApiError::bad_request("nothing to merge"));
    }
    let out = merge_with_report(&libs).map_err(|e| ApiError {
        detail: json!({"error": format!("{e:?}")}),
        ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_failed", e.to_string())
    })?;
    let saved = if req.save {
        let editor = req.editor.unwrap_or_else(|| "anonymous".into());
        Some(st.store.create_schema(&out.library, &editor)?.id)
    } else {
        None
    };
    Ok(Json(json!({
        "library": to_sdf_value(&out.library),
        "warnings": out.warnings,
        "id": saved,
    })))
}

#[derive(Deserialize)]
struct ExtractionRequest {
    events: Option<Vec<ExtractedEvent>>,
    document: Option<Document>,
    gazetteer: Option<String>,
}

async fn create_extractions(
    State(st): State<AppState>,
    payload: Result<Json<ExtractionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req = body(payload)?;
    let events = match (req.events, req.document) {
        (Some(ev), _) => ev,
        (None, Some(doc)) => {
            let gaz = Gazetteer::parse(req.gazetteer.as_deref().unwrap_or(DEFAULT_GAZETTEER))
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            baseline_extract(&doc, &gaz)
        }
        (None, None) => return Err(ApiError::bad_request("need events or a document")),
    };
    let mut ids = BTreeSet::new();
    if let Some(dup) = events.iter().find(|e| !ids.insert(e.id.as_str())) {
        return Err(ApiError::bad_request(format!("duplicate extraction id {}", dup.id)));
    }
    let id = st.store.save_extractions(&events)?;
    Ok((StatusCode::CREATED, Json(json!({"id": id, "events": events}))))
}

async fn create_run(
    State(st): State<AppState>,
    payload: Result<Json<RunRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<PipelineRun>), ApiError> {
    let req = body(payload)?;
    let store = st.store.clone();
    let run = tokio::task::spawn_blocking(move || run_stored(&store, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(run)))
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<PipelineRun> {
    Ok(Json(st.store.load_run(&id)?))
}

#[derive(Deserialize)]
struct EvaluateRequest {
    learned: Option<LibraryInput>,
    gold: Option<LibraryInput>,
    /// Re-scores a stored run against a gold event set.
    run_id: Option<String>,
    gold_events: Option<Vec<EventId>>,
}

async fn evaluate(State(st): State<AppState>, payload: Result<Json<EvaluateRequest>, JsonRejection>) -> ApiResult<Value> {
    let req = body(payload)?;
    if let Some(run_id) = req.run_id {
        let gold: BTreeSet<EventId> = req
            .gold_events
            .ok_or_else(|| ApiError::bad_request("run evaluation needs gold_events"))?
            .into_iter()
            .collect();
        let mut run: PipelineRun = st.store.load_run(&run_id)?;
        let lib = st.store.get_schema(&run.schema_id, Some(run.schema_version))?.library;
        let prf = node_set_prf(&lib, &run.output.prediction, &gold);
        run.output.prf = Some(prf);
        st.store.save_run(&run.id, &run)?;
        return Ok(Json(json!({"run_id": run.id, "prf": prf})));
    }
    let (Some(learned), Some(gold)) = (req.learned, req.gold) else {
        return Err(ApiError::bad_request("need learned and gold, or run_id and gold_events"));
    };
    let (learned, gold) = (learned.resolve()?, gold.resolve()?);
    let metric = st.metric.clone();
    let rep: MetricReport = tokio::task::spawn_blocking(move || report(&learned, &gold, &metric))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(serde_json::to_value(rep).unwrap_or(Value::Null)))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: AppState) -> Router {
    let ui = ServeDir::new(&state.ui_dir);
    Router::new()
        .route("/health", get(health))
        .route("/schemas", post(create_schema).get(list_schemas))
        .route("/schemas/merge", post(merge_schemas))
        .route("/schemas/{id}", get(get_schema).put(put_schema))
        .route("/schemas/{id}/lock", post(acquire_lock).delete(release_lock))
        .route("/extractions", post(create_extractions))
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/evaluate", post(evaluate))
        .nest_service("/ui", ui)
        .fallback(fallback)
        .with_state(state)
}
