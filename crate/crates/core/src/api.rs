//! REST interface over a [`Workbench`].
//!
//! Every request names its user in the `X-User-Id` header. Bodies are parsed
//! by hand from raw bytes so that every failure, malformed input included,
//! maps to a JSON error with a machine code:
//!
//! ```json
//! { "code": "INSUFFICIENT_QUALIFICATION", "message": "insufficient qualification: user `ana` is not an expert" }
//! ```
//!
//! Writes take the workbench lock exclusively, so appends are serialized;
//! reads share it and always see a complete log prefix.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cleansing::{CleansingError, CorrectionRule, EditRequest, NewValue};
use crate::exploration::{state_of, ExplorationError, PNG_MEDIA_TYPE};
use crate::ingest::{load_fusion_config_file, FusionConfig, IngestError, SourceDescriptor};
use crate::model::{
    AnnotationId, BlobId, CellKey, EditScope, LifecycleState, ModelError, Timestamp, UserRegistry,
    Verdict,
};
use crate::store::{EventPredicate, Step, StoreError};
use crate::workbench::{Clock, SystemClock, Workbench, WorkbenchError};

pub const USER_HEADER: &str = "x-user-id";
pub const LOCK_FILE: &str = "annofuse.lock";
const MAX_BODY: usize = 32 * 1024 * 1024;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn model_code(e: &ModelError) -> (StatusCode, &'static str) {
    match e {
        ModelError::InsufficientQualification(_) => (StatusCode::FORBIDDEN, "INSUFFICIENT_QUALIFICATION"),
        ModelError::SchemaMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "SCHEMA_MISMATCH"),
        ModelError::InvertedInterval { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SCOPE"),
        ModelError::InvalidBlobId(_) => (StatusCode::BAD_REQUEST, "INVALID_BLOB_ID"),
        _ => (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_ANNOTATION"),
    }
}

fn store_code(e: &StoreError) -> (StatusCode, &'static str) {
    match e {
        StoreError::Invalid(m) => model_code(m),
        StoreError::UnknownTarget(_) => (StatusCode::NOT_FOUND, "UNKNOWN_TARGET"),
        StoreError::NotVotable(..) => (StatusCode::UNPROCESSABLE_ENTITY, "TARGET_NOT_VOTABLE"),
        StoreError::Corrupt { .. } | StoreError::ReadOnly(_) | StoreError::Io { .. } => {
            (StatusCode::INTERNAL_SERVER_ERROR, "STORAGE_ERROR")
        }
    }
}

fn code_of(e: &WorkbenchError) -> (StatusCode, &'static str) {
    use StatusCode as S;
    match e {
        WorkbenchError::AlreadyFused => (S::CONFLICT, "ALREADY_FUSED"),
        WorkbenchError::NoSources => (S::CONFLICT, "NO_SOURCES"),
        WorkbenchError::DuplicateSource(_) => (S::CONFLICT, "DUPLICATE_SOURCE"),
        WorkbenchError::UnknownUser(_) => (S::UNAUTHORIZED, "UNKNOWN_USER"),
        WorkbenchError::WrongKind(..) => (S::NOT_FOUND, "UNKNOWN_TARGET"),
        WorkbenchError::Ingest(i) => match i {
            IngestError::DuplicateSource(_) => (S::CONFLICT, "DUPLICATE_SOURCE"),
            IngestError::Io { .. } => (S::INTERNAL_SERVER_ERROR, "STORAGE_ERROR"),
            _ => (S::BAD_REQUEST, "INVALID_SOURCE"),
        },
        WorkbenchError::Cleansing(c) => match c {
            CleansingError::EmptyScope => (S::UNPROCESSABLE_ENTITY, "EMPTY_SCOPE"),
            CleansingError::UnknownUser(_) => (S::UNAUTHORIZED, "UNKNOWN_USER"),
            CleansingError::EmptyRationale => (S::UNPROCESSABLE_ENTITY, "EMPTY_RATIONALE"),
            CleansingError::KindMismatch { .. } => (S::UNPROCESSABLE_ENTITY, "KIND_MISMATCH"),
            CleansingError::ValueMapMismatch(_) => (S::UNPROCESSABLE_ENTITY, "VALUE_MAP_MISMATCH"),
            CleansingError::InvalidRule(_) => (S::UNPROCESSABLE_ENTITY, "INVALID_RULE"),
            CleansingError::InsufficientQualification(_) => (S::FORBIDDEN, "INSUFFICIENT_QUALIFICATION"),
            CleansingError::UnknownTarget(_) | CleansingError::NotAnEdit(..) => {
                (S::NOT_FOUND, "UNKNOWN_TARGET")
            }
            CleansingError::Model(m) => model_code(m),
            CleansingError::Store(s) => store_code(s),
            CleansingError::Config(_) => (S::BAD_REQUEST, "BAD_REQUEST"),
        },
        WorkbenchError::Exploration(x) => match x {
            ExplorationError::EmptyText(_) => (S::UNPROCESSABLE_ENTITY, "EMPTY_TEXT"),
            ExplorationError::UnknownUser(_) => (S::UNAUTHORIZED, "UNKNOWN_USER"),
            ExplorationError::UnknownTarget(_) => (S::NOT_FOUND, "UNKNOWN_TARGET"),
            ExplorationError::NotVotable(..) => (S::UNPROCESSABLE_ENTITY, "TARGET_NOT_VOTABLE"),
            ExplorationError::InsufficientQualification(_) => (S::FORBIDDEN, "INSUFFICIENT_QUALIFICATION"),
            ExplorationError::NoDataRefs => (S::UNPROCESSABLE_ENTITY, "NO_DATA_REFS"),
            ExplorationError::InvalidSnapshot(_) => (S::UNPROCESSABLE_ENTITY, "INVALID_SNAPSHOT"),
            ExplorationError::BlobNotFound(_) => (S::NOT_FOUND, "UNKNOWN_BLOB"),
            ExplorationError::Io { .. } => (S::INTERNAL_SERVER_ERROR, "STORAGE_ERROR"),
            ExplorationError::Store(s) => store_code(s),
            ExplorationError::Model(m) => model_code(m),
        },
        WorkbenchError::Store(s) => store_code(s),
        WorkbenchError::Replay(_) => (S::INTERNAL_SERVER_ERROR, "STORAGE_ERROR"),
    }
}

impl From<WorkbenchError> for ApiError {
    fn from(e: WorkbenchError) -> Self {
        let (status, code) = code_of(&e);
        Self::new(status, code, e.to_string())
    }
}

impl From<ExplorationError> for ApiError {
    fn from(e: ExplorationError) -> Self {
        WorkbenchError::from(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    workbench: Arc<RwLock<Workbench>>,
}

impl AppState {
    pub fn new(workbench: Workbench) -> Self {
        Self {
            workbench: Arc::new(RwLock::new(workbench)),
        }
    }

    pub fn workbench(&self) -> Arc<RwLock<Workbench>> {
        self.workbench.clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Workbench> {
        self.workbench.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Workbench> {
        self.workbench.write().unwrap_or_else(|p| p.into_inner())
    }
}

/// The user named by `X-User-Id`, checked against the registry.
fn user(headers: &HeaderMap, users: &UserRegistry) -> ApiResult<String> {
    let id = headers
        .get(USER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "MISSING_USER", "X-User-Id header is required"))?;
    match users.get(id) {
        Some(u) => Ok(u.user_id.clone()),
        None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNKNOWN_USER", format!("unknown user `{id}`"))),
    }
}

fn json_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn query<T: DeserializeOwned>(uri: &Uri) -> ApiResult<T> {
    Query::<T>::try_from_uri(uri)
        .map(|q| q.0)
        .map_err(|e| ApiError::bad_request(format!("invalid query: {}", e.body_text())))
}

fn annotation_id(raw: &str) -> ApiResult<AnnotationId> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{raw}` is not an annotation id")))
}

fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, Json(value)).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadBody {
    descriptor: SourceDescriptor,
    csv: String,
}

async fn upload_source(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let mut wb = s.write();
    user(&headers, wb.users())?;
    let body: UploadBody = json_body(&body)?;
    if body.descriptor.path.is_some() {
        return Err(ApiError::bad_request("uploaded descriptors must not name a file path"));
    }
    Ok(created(wb.add_source(&body.descriptor, body.csv.as_bytes())?))
}

async fn run_fuse(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    let mut wb = s.write();
    user(&headers, wb.users())?;
    Ok(Json(wb.fuse()?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellsQuery {
    entity: Option<String>,
    dimension: Option<String>,
}

async fn cells(State(s): State<AppState>, headers: HeaderMap, uri: Uri) -> ApiResult<Response> {
    let wb = s.read();
    user(&headers, wb.users())?;
    let q: CellsQuery = query(&uri)?;
    Ok(Json(wb.cells(q.entity.as_deref(), q.dimension.as_deref())).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationsQuery {
    step: String,
    /// Comma-separated lifecycle states.
    state: Option<String>,
    entity: Option<String>,
    dimension: Option<String>,
    from: Option<Timestamp>,
    to: Option<Timestamp>,
    limit: Option<usize>,
    #[serde(default)]
    offset: usize,
}

#[derive(Serialize)]
struct EventView<'a> {
    seq: u64,
    wall_time: Timestamp,
    step: Step,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<LifecycleState>,
    annotation: &'a crate::model::Annotation,
}

async fn annotations(State(s): State<AppState>, headers: HeaderMap, uri: Uri) -> ApiResult<Response> {
    let wb = s.read();
    user(&headers, wb.users())?;
    let q: AnnotationsQuery = query(&uri)?;
    let step: Step = q.step.parse().map_err(ApiError::bad_request)?;
    let states = q
        .state
        .as_deref()
        .map(|raw| {
            raw.split(',')
                .map(|s| s.trim().parse::<LifecycleState>())
                .collect::<Result<BTreeSet<_>, _>>()
        })
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let predicate = EventPredicate {
        entity_id: q.entity,
        dimension: q.dimension,
        cell: None,
        from: q.from,
        to: q.to,
    };
    let log = wb.log();
    let views: Vec<EventView> = wb
        .query(step, &predicate, states.as_ref())
        .into_iter()
        .skip(q.offset)
        .take(q.limit.unwrap_or(usize::MAX))
        .map(|e| EventView {
            seq: e.seq,
            wall_time: e.wall_time,
            step,
            state: state_of(log, e.id()),
            annotation: &e.annotation,
        })
        .collect();
    Ok(Json(views).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    scope: EditScope,
    new_value: NewValue,
    rationale: String,
    #[serde(default)]
    rule_set: Option<String>,
}

#[derive(Serialize)]
struct Created<T> {
    id: AnnotationId,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct EditCreated {
    edit: crate::model::Edit,
}

async fn submit_edit(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let mut wb = s.write();
    let author = user(&headers, wb.users())?;
    let body: EditBody = json_body(&body)?;
    let request = EditRequest {
        scope: body.scope,
        new_value: body.new_value,
        author,
        rationale: body.rationale,
        rule_set: body.rule_set,
    };
    let (id, edit) = wb.edit(&request)?;
    Ok(created(Created { id, body: EditCreated { edit } }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionBody {
    rule: CorrectionRule,
}

async fn run_correction(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let mut wb = s.write();
    let author = user(&headers, wb.users())?;
    let body: CorrectionBody = json_body(&body)?;
    let edits: Vec<Created<EditCreated>> = wb
        .rule_edit(&body.rule, &author)?
        .into_iter()
        .map(|(id, edit)| Created { id, body: EditCreated { edit } })
        .collect();
    Ok(created(edits))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    verdict: Verdict,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetedVoteBody {
    target: AnnotationId,
    verdict: Verdict,
}

#[derive(Serialize)]
struct VoteCreated {
    vote: crate::model::Vote,
    state: LifecycleState,
}

#[derive(Clone, Copy)]
enum VoteOn {
    Edit,
    Finding,
    Any,
}

fn cast(s: &AppState, headers: &HeaderMap, target: AnnotationId, verdict: Verdict, on: VoteOn) -> ApiResult<Response> {
    let mut wb = s.write();
    let voter = user(headers, wb.users())?;
    let (id, vote) = match on {
        VoteOn::Edit => wb.vote_edit(target, verdict, &voter)?,
        VoteOn::Finding => wb.vote_finding(target, verdict, &voter)?,
        VoteOn::Any => wb.vote(target, verdict, &voter)?,
    };
    let state = state_of(wb.log(), target).unwrap_or(LifecycleState::Unvalidated);
    Ok(created(Created { id, body: VoteCreated { vote, state } }))
}

async fn vote_edit(
    State(s): State<AppState>,
    axum::extract::Path(id): axum::extract::Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let target = annotation_id(&id)?;
    let body: VoteBody = json_body(&body)?;
    cast(&s, &headers, target, body.verdict, VoteOn::Edit)
}

async fn vote_finding(
    State(s): State<AppState>,
    axum::extract::Path(id): axum::extract::Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let target = annotation_id(&id)?;
    let body: VoteBody = json_body(&body)?;
    cast(&s, &headers, target, body.verdict, VoteOn::Finding)
}

async fn vote_any(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let body: TargetedVoteBody = json_body(&body)?;
    cast(&s, &headers, body.target, body.verdict, VoteOn::Any)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommentBody {
    text: String,
}

#[derive(Serialize)]
struct CommentCreated {
    comment: crate::model::Comment,
}

async fn add_comment(
    State(s): State<AppState>,
    axum::extract::Path(id): axum::extract::Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let target = annotation_id(&id)?;
    let mut wb = s.write();
    let author = user(&headers, wb.users())?;
    let body: CommentBody = json_body(&body)?;
    let (id, comment) = wb.comment(target, &body.text, &author)?;
    Ok(created(Created { id, body: CommentCreated { comment } }))
}

#[derive(Serialize)]
struct FindingCreated {
    finding: crate::model::Finding,
}

/// Multipart fields: `text`, `cells` (JSON array of cell keys), `snapshot`
/// (PNG bytes) and optionally `allow_empty_refs` (`true`/`false`).
async fn add_finding(State(s): State<AppState>, request: Request) -> ApiResult<Response> {
    let headers = request.headers().clone();
    user(&headers, s.read().users())?;
    let mut multipart = Multipart::from_request(request, &s)
        .await
        .map_err(|e| ApiError::bad_request(format!("expected multipart/form-data: {}", e.body_text())))?;
    let mut text = None;
    let mut cells: Option<Vec<CellKey>> = None;
    let mut snapshot = None;
    let mut allow_empty_refs = false;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {}", e.body_text())))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("malformed multipart field `{name}`: {}", e.body_text())))?;
        let as_text = || {
            String::from_utf8(bytes.to_vec())
                .map_err(|_| ApiError::bad_request(format!("field `{name}` must be UTF-8 text")))
        };
        match name.as_str() {
            "text" => text = Some(as_text()?),
            "cells" => cells = Some(json_body(&bytes)?),
            "snapshot" => snapshot = Some(bytes.to_vec()),
            "allow_empty_refs" => {
                allow_empty_refs = as_text()?
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::bad_request("allow_empty_refs must be true or false"))?
            }
            other => return Err(ApiError::bad_request(format!("unexpected multipart field `{other}`"))),
        }
    }
    let text = text.ok_or_else(|| ApiError::bad_request("missing field `text`"))?;
    let snapshot = snapshot.ok_or_else(|| ApiError::bad_request("missing field `snapshot`"))?;

    let mut wb = s.write();
    let author = user(&headers, wb.users())?;
    let (id, finding) = wb.finding(&text, snapshot, cells.unwrap_or_default(), &author, allow_empty_refs)?;
    Ok(created(Created { id, body: FindingCreated { finding } }))
}

async fn get_blob(
    State(s): State<AppState>,
    axum::extract::Path(id): axum::extract::Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let wb = s.read();
    user(&headers, wb.users())?;
    let id = BlobId::try_from(id).map_err(|e| WorkbenchError::Exploration(ExplorationError::Model(e)))?;
    let bytes = wb.blobs().get(&id)?;
    Ok(([(header::CONTENT_TYPE, PNG_MEDIA_TYPE)], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedQuery {
    #[serde(default)]
    include_edits: bool,
    limit: Option<usize>,
    #[serde(default)]
    offset: usize,
}

async fn feed(State(s): State<AppState>, headers: HeaderMap, uri: Uri) -> ApiResult<Response> {
    let wb = s.read();
    user(&headers, wb.users())?;
    let q: FeedQuery = query(&uri)?;
    let cards: Vec<_> = wb
        .feed(q.include_edits)
        .into_iter()
        .skip(q.offset)
        .take(q.limit.unwrap_or(usize::MAX))
        .collect();
    Ok(Json(cards).into_response())
}

async fn not_found(uri: Uri) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no endpoint at {}", uri.path()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sources", post(upload_source))
        .route("/api/fuse", post(run_fuse))
        .route("/api/cells", get(cells))
        .route("/api/annotations", get(annotations))
        .route("/api/annotations/{id}/comments", post(add_comment))
        .route("/api/edits", post(submit_edit))
        .route("/api/edits/{id}/votes", post(vote_edit))
        .route("/api/corrections", post(run_correction))
        .route("/api/findings", post(add_finding))
        .route("/api/findings/{id}/votes", post(vote_finding))
        .route("/api/votes", post(vote_any))
        .route("/api/blobs/{id}", get(get_blob))
        .route("/api/feed", get(feed))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

/// Marks a data directory as owned by a running service. Removed on drop.
#[derive(Debug)]
pub struct ServiceLock {
    path: PathBuf,
}

impl ServiceLock {
    pub fn acquire(data_dir: &Path) -> std::io::Result<Self> {
        use std::io::Write;
        let path = data_dir.join(LOCK_FILE);
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    std::io::Error::new(
                        e.kind(),
                        format!("{} exists: another service owns this data directory", path.display()),
                    )
                } else {
                    e
                }
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }

    pub fn is_held(data_dir: &Path) -> bool {
        data_dir.join(LOCK_FILE).exists()
    }
}

impl Drop for ServiceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub hierarchy: Option<PathBuf>,
    pub users: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("startup failed: {0}")]
    Startup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the workbench for a data directory, ready to serve.
pub fn open_state(config: &ServeConfig, clock: Box<dyn Clock>) -> Result<AppState, ServeError> {
    let users = UserRegistry::load(&config.users).map_err(|e| ServeError::Startup(e.to_string()))?;
    let fusion = match &config.hierarchy {
        Some(p) => load_fusion_config_file(p).map_err(|e| ServeError::Startup(e.to_string()))?,
        None => FusionConfig::default(),
    };
    let wb = Workbench::open_dir(&config.data_dir, users, fusion, clock)
        .map_err(|e| ServeError::Startup(format!("{}: {e}", config.data_dir.display())))?;
    Ok(AppState::new(wb))
}

/// Runs the service until Ctrl-C.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    std::fs::create_dir_all(&config.data_dir)
        .map_err(|e| ServeError::Startup(format!("cannot create {}: {e}", config.data_dir.display())))?;
    let _lock = ServiceLock::acquire(&config.data_dir).map_err(|e| ServeError::Startup(e.to_string()))?;
    let state = open_state(&config, Box::new(SystemClock))?;
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| ServeError::Startup(format!("cannot bind {}: {e}", config.addr)))?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
