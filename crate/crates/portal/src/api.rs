//! The `/api/v1` HTTP surface.
//!
//! Every route except login sits behind the bearer-token middleware, so an
//! unauthenticated request is answered with 401 before any handler runs.
//! Handlers authorize against the role matrix before they look anything up
//! or parse their body, which keeps 403 ahead of 400/404/409.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::{get, patch, post};
use axum::{Extension, Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sciflow_core::access::{Principal, Role};
use sciflow_core::bridge::{BackendDescriptor, BridgeError};
use sciflow_core::engine::EngineError;
use sciflow_core::instance::{instance_of_job, InstanceStatus, JobState, WorkflowInstance};
use sciflow_core::model::{export_archive, import_archive, instantiate_template, ArchiveItem, ItemKind, TemplateError};
use sciflow_core::repository::{ItemFilter, ItemMeta, RepoError};
use sciflow_core::sweep::Coord;

use crate::auth::{authorize, authorize_scoped, role_allows, Action, AuthError, Denied, UserUpdate};
use crate::server::{Portal, StartError};

/// Longest accepted `?wait=` in milliseconds.
pub const MAX_WAIT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message, "details": self.details}});
        (self.status, Json(body)).into_response()
    }
}

impl From<Denied> for ApiError {
    fn from(d: Denied) -> Self {
        ApiError::new(StatusCode::FORBIDDEN, "forbidden", d.to_string()).with_details(json!({"action": d.action}))
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        use AuthError::*;
        let (status, code) = match &e {
            InvalidCredentials => (StatusCode::UNAUTHORIZED, "invalid_credentials"),
            MissingToken | InvalidToken => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            TokenExpired => (StatusCode::UNAUTHORIZED, "token_expired"),
            AccountDisabled => (StatusCode::FORBIDDEN, "account_disabled"),
            DuplicateUser(_) => (StatusCode::CONFLICT, "conflict"),
            UnknownUser(_) => (StatusCode::NOT_FOUND, "not_found"),
            InvalidUsername(_) | EmptyPassword => (StatusCode::BAD_REQUEST, "bad_request"),
            Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<RepoError> for ApiError {
    fn from(e: RepoError) -> Self {
        use RepoError::*;
        let (status, code) = match &e {
            NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            PublishedImmutable(_) => (StatusCode::CONFLICT, "published_immutable"),
            KindMismatch { .. } => (StatusCode::CONFLICT, "kind_mismatch"),
            InvalidArchive(_) => (StatusCode::BAD_REQUEST, "invalid_archive"),
            SequenceGap { .. } | Integrity(_) | CorruptLog { .. } | Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError::*;
        let message = e.to_string();
        match e {
            UnknownInstance(_) | UnknownJob(_) => ApiError::not_found(message),
            IncompleteDefinition(errors) => ApiError::new(StatusCode::BAD_REQUEST, "incomplete_definition", message)
                .with_details(serde_json::to_value(errors).unwrap_or(Value::Null)),
            UnresolvableBackendSelector { node } => {
                ApiError::new(StatusCode::BAD_REQUEST, "unresolvable_backend", message).with_details(json!({"node": node}))
            }
            SweepTooDeep { node, depth, max } => ApiError::new(StatusCode::BAD_REQUEST, "sweep_too_deep", message)
                .with_details(json!({"node": node, "depth": depth, "max": max})),
            AlreadyTerminal(_) => ApiError::new(StatusCode::CONFLICT, "already_terminal", message),
            NotInErrorState { state, .. } => {
                ApiError::new(StatusCode::CONFLICT, "not_in_error_state", message).with_details(json!({"state": state}))
            }
            AttemptLimit { max, .. } => {
                ApiError::new(StatusCode::CONFLICT, "attempt_limit", message).with_details(json!({"max": max}))
            }
            Repo(e) => e.into(),
            Io(_) | Internal(_) => ApiError::internal(message),
        }
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        let message = e.to_string();
        match e {
            BridgeError::DuplicateId(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message),
            BridgeError::InvalidCapacity(_) | BridgeError::InvalidDescriptor(_) => ApiError::bad_request(message),
            BridgeError::UnknownBackend(_) => ApiError::not_found(message),
            _ => ApiError::internal(message),
        }
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        let code = match e {
            TemplateError::FrozenFieldWrite(_) => "frozen_field",
            TemplateError::MissingRequiredFill(_) => "missing_fill",
            _ => "invalid_fill",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}

impl From<StartError> for ApiError {
    fn from(e: StartError) -> Self {
        match e {
            StartError::Bridge(b) => b.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

/// The authenticated caller, inserted by the middleware.
#[derive(Debug, Clone)]
pub struct Caller {
    pub principal: Principal,
    pub token: String,
}

async fn authenticate(State(portal): State<Arc<Portal>>, mut req: Request, next: Next) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    let Some(token) = token else {
        return ApiError::from(AuthError::MissingToken).into_response();
    };
    match portal.accounts.validate(&token) {
        Ok(principal) => {
            req.extensions_mut().insert(Caller { principal, token });
            next.run(req).await
        }
        Err(e) => ApiError::from(e).into_response(),
    }
}

pub fn router(portal: Arc<Portal>) -> Router {
    let protected = Router::new()
        .route("/auth/logout", post(logout))
        .route("/auth/me", get(me))
        .route("/workflows", get(list_workflows).post(create_workflow))
        .route("/workflows/import", post(import_workflow))
        .route("/workflows/{id}", get(get_workflow))
        .route("/workflows/{id}/export", post(export_workflow))
        .route("/workflows/{id}/publish", post(publish_workflow))
        .route("/templates/{id}/instantiate", post(instantiate))
        .route("/instances", get(list_instances).post(submit_instance))
        .route("/instances/{id}", get(get_instance))
        .route("/instances/{id}/abort", post(abort_instance))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/stdout", get(job_stdout))
        .route("/jobs/{id}/stderr", get(job_stderr))
        .route("/jobs/{id}/outputs/{name}", get(job_output))
        .route("/jobs/{id}/resubmit", post(resubmit_job))
        .route("/backends", get(list_backends).post(add_backend))
        .route("/users", get(list_users).post(create_user))
        .route("/users/{name}", patch(update_user))
        .route_layer(middleware::from_fn_with_state(portal.clone(), authenticate));
    let api = Router::new()
        .route("/auth/login", post(login))
        .merge(protected)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        });
    let root = Router::new()
        .route("/", get(|| async { Redirect::to("/ui/") }))
        .nest("/api/v1", api);
    let root = match portal.ui_dir() {
        Some(dir) => root.nest_service("/ui", tower_http::services::ServeDir::new(dir)),
        None => {
            let placeholder = get(|| async { Html(UI_PLACEHOLDER) });
            root.route("/ui", placeholder.clone())
                .route("/ui/", placeholder.clone())
                .route("/ui/{*rest}", placeholder)
        }
    };
    root
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(portal)
}

const UI_PLACEHOLDER: &str = "<!doctype html>\n<html><head><title>sciflow</title></head>\n<body><h1>sciflow</h1>\n<p>The web UI has not been built. The JSON API is served under <code>/api/v1</code>.</p></body></html>\n";

#[derive(Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

async fn login(State(portal): State<Arc<Portal>>, body: Bytes) -> ApiResult<Response> {
    let LoginBody { username, password } = parse_body(&body)?;
    let issued = blocking(move || Ok(portal.accounts.authenticate(&username, &password)?)).await?;
    Ok(Json(issued).into_response())
}

async fn logout(State(portal): State<Arc<Portal>>, Extension(caller): Extension<Caller>) -> StatusCode {
    portal.accounts.revoke(&caller.token);
    StatusCode::NO_CONTENT
}

async fn me(Extension(caller): Extension<Caller>) -> Json<Value> {
    let p = caller.principal;
    let actions: Vec<Action> = Action::ALL.into_iter().filter(|a| role_allows(p.role, *a)).collect();
    Json(json!({"user": p.user, "role": p.role, "actions": actions}))
}

fn creation_action(kind: ItemKind) -> Action {
    if kind == ItemKind::Graph {
        Action::CreateGraph
    } else {
        Action::EditWorkflow
    }
}

fn may_author(p: &Principal) -> ApiResult<()> {
    if role_allows(p.role, Action::CreateGraph) || role_allows(p.role, Action::EditWorkflow) {
        Ok(())
    } else {
        Err(authorize(p, Action::EditWorkflow, None).unwrap_err().into())
    }
}

async fn list_workflows(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Query(filter): Query<ItemFilter>,
) -> ApiResult<Json<Vec<ItemMeta>>> {
    Ok(Json(portal.engine.repository().list_items(&caller.principal, &filter)?))
}

#[derive(Deserialize)]
struct PutBody {
    item: ArchiveItem,
    #[serde(default)]
    id: Option<String>,
}

fn store_item(portal: &Portal, p: &Principal, id: Option<&str>, archive: Vec<u8>, kind: ItemKind) -> ApiResult<Response> {
    authorize(p, creation_action(kind), None)?;
    let meta = portal
        .engine
        .repository()
        .put_item(p, id, archive, portal.clock.now_ms())?;
    Ok((StatusCode::CREATED, Json(meta)).into_response())
}

async fn create_workflow(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    may_author(&caller.principal)?;
    let PutBody { item, id } = parse_body(&body)?;
    let kind = item.kind();
    store_item(&portal, &caller.principal, id.as_deref(), export_archive(&item), kind)
}

#[derive(Deserialize)]
struct ImportQuery {
    id: Option<String>,
}

async fn import_workflow(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Query(q): Query<ImportQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    may_author(&caller.principal)?;
    let item = import_archive(&body).map_err(RepoError::from)?;
    store_item(&portal, &caller.principal, q.id.as_deref(), body.to_vec(), item.kind())
}

async fn get_workflow(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let item = portal.engine.repository().get_item(&caller.principal, &id)?;
    let decoded = item.decode()?;
    Ok(Json(json!({"meta": item.meta, "item": decoded})))
}

async fn export_workflow(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let item = portal.engine.repository().get_item(&caller.principal, &id)?;
    let disposition = format!("attachment; filename=\"{}_v{}.zip\"", item.meta.name, item.meta.version);
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/zip")),
            (
                header::CONTENT_DISPOSITION,
                HeaderValue::from_str(&disposition).unwrap_or(HeaderValue::from_static("attachment")),
            ),
        ],
        item.archive,
    )
        .into_response())
}

async fn publish_workflow(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    authorize(&caller.principal, Action::Publish, None)?;
    let visibility = portal.engine.repository().publish(&caller.principal, &id)?;
    Ok(Json(json!({"id": id, "visibility": visibility})))
}

#[derive(Deserialize)]
struct InstantiateBody {
    #[serde(default)]
    fills: BTreeMap<String, Value>,
    #[serde(default = "yes")]
    submit: bool,
}

fn yes() -> bool {
    true
}

async fn instantiate(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let p = caller.principal;
    authorize(&p, Action::Submit, None)?;
    let item = portal.engine.repository().get_item(&p, &id)?;
    let ArchiveItem::Template(template) = item.decode()? else {
        return Err(ApiError::bad_request(format!("item {id} is a {}, not a template", item.meta.kind.as_str())));
    };
    let InstantiateBody { fills, submit } = parse_body(&body)?;
    let def = instantiate_template(&template, &fills)?;
    if !submit {
        return Ok(Json(json!({"definition": def})).into_response());
    }
    let engine = portal.engine.clone();
    let instance = blocking(move || Ok(engine.submit_workflow(def, &p.user)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"id": instance}))).into_response())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub node: String,
    pub coord: Coord,
    pub state: JobState,
    pub attempt: u32,
    pub backend: Option<String>,
    pub exit_code: Option<i32>,
    pub reason: Option<String>,
}

/// Instance status as served over HTTP. `status` is computed at `seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceView {
    pub id: String,
    pub owner: String,
    pub workflow: String,
    pub status: InstanceStatus,
    pub seq: u64,
    pub abort_requested: bool,
    pub created_at: u64,
    pub updated_at: u64,
    pub plan_failures: BTreeMap<String, String>,
    pub jobs: Vec<JobSummary>,
}

impl InstanceView {
    pub fn of(inst: &WorkflowInstance) -> Self {
        InstanceView {
            id: inst.id.clone(),
            owner: inst.owner.clone(),
            workflow: inst.definition.name().to_string(),
            status: inst.compute_status(),
            seq: inst.seq,
            abort_requested: inst.abort_requested,
            created_at: inst.created_at,
            updated_at: inst.updated_at,
            plan_failures: inst.plan_failures.clone(),
            jobs: inst
                .jobs
                .values()
                .map(|j| JobSummary {
                    id: j.id.clone(),
                    node: j.node.clone(),
                    coord: j.coord.clone(),
                    state: j.state,
                    attempt: j.attempt,
                    backend: j.backend.clone(),
                    exit_code: j.exit_code,
                    reason: j.reason.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: String,
    pub owner: String,
    pub workflow: String,
    pub status: InstanceStatus,
    pub seq: u64,
    pub created_at: u64,
}

async fn list_instances(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
) -> ApiResult<Json<Vec<InstanceSummary>>> {
    let p = caller.principal;
    let any = role_allows(p.role, Action::MonitorAny);
    if !any {
        authorize(&p, Action::MonitorOwn, None)?;
    }
    let engine = &portal.engine;
    let mut out = Vec::new();
    for id in engine.instance_ids() {
        let summary = engine.with_instance(&id, |i| InstanceSummary {
            id: i.id.clone(),
            owner: i.owner.clone(),
            workflow: i.definition.name().to_string(),
            status: i.compute_status(),
            seq: i.seq,
            created_at: i.created_at,
        })?;
        if any || summary.owner == p.user {
            out.push(summary);
        }
    }
    out.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    Ok(Json(out))
}

#[derive(Deserialize)]
struct SubmitBody {
    workflow_id: String,
    #[serde(default)]
    version: Option<u32>,
}

async fn submit_instance(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    let p = caller.principal;
    authorize(&p, Action::Submit, None)?;
    let SubmitBody { workflow_id, version } = parse_body(&body)?;
    let repo = portal.engine.repository();
    let item = match version {
        Some(v) => repo.get_item_version(&p, &workflow_id, v)?,
        None => repo.get_item(&p, &workflow_id)?,
    };
    let decoded = item.decode()?;
    let Some(def) = decoded.definition().cloned() else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "not_runnable",
            format!("a {} cannot be submitted directly", item.meta.kind.as_str()),
        ));
    };
    let engine = portal.engine.clone();
    let id = blocking(move || Ok(engine.submit_workflow(def, &p.user)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"id": id}))).into_response())
}

fn instance_owner(portal: &Portal, id: &str) -> ApiResult<String> {
    Ok(portal.engine.with_instance(id, |i| i.owner.clone())?)
}

#[derive(Deserialize)]
struct WaitQuery {
    wait: Option<u64>,
    since: Option<u64>,
}

async fn get_instance(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> ApiResult<Json<InstanceView>> {
    let owner = instance_owner(&portal, &id)?;
    authorize_scoped(&caller.principal, Action::MonitorOwn, Action::MonitorAny, &owner)?;
    if let Some(wait) = q.wait {
        let engine = portal.engine.clone();
        let since = match q.since {
            Some(s) => s,
            None => engine.with_instance(&id, |i| i.seq)?,
        };
        let timeout = Duration::from_millis(wait.min(MAX_WAIT_MS));
        let wid = id.clone();
        blocking(move || Ok(engine.wait_for_change(&wid, since, timeout)?)).await?;
    }
    Ok(Json(portal.engine.with_instance(&id, InstanceView::of)?))
}

async fn abort_instance(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
) -> ApiResult<Json<InstanceView>> {
    let owner = instance_owner(&portal, &id)?;
    authorize_scoped(&caller.principal, Action::AbortOwn, Action::AbortAny, &owner)?;
    let engine = portal.engine.clone();
    let aid = id.clone();
    blocking(move || Ok(engine.abort(&aid)?)).await?;
    Ok(Json(portal.engine.with_instance(&id, InstanceView::of)?))
}

fn job_owner(portal: &Portal, job: &str) -> ApiResult<String> {
    let instance = instance_of_job(job).ok_or_else(|| ApiError::not_found(format!("unknown job {job}")))?;
    instance_owner(portal, instance).map_err(|e| {
        if e.status == StatusCode::NOT_FOUND {
            ApiError::not_found(format!("unknown job {job}"))
        } else {
            e
        }
    })
}

async fn get_job(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(job): Path<String>,
) -> ApiResult<Response> {
    let owner = job_owner(&portal, &job)?;
    authorize_scoped(&caller.principal, Action::MonitorOwn, Action::MonitorAny, &owner)?;
    Ok(Json(portal.engine.job(&job)?).into_response())
}

enum Stream {
    Stdout,
    Stderr,
}

fn raw(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"))], bytes).into_response()
}

async fn job_stream(portal: Arc<Portal>, caller: Caller, job: String, which: Stream) -> ApiResult<Response> {
    let owner = job_owner(&portal, &job)?;
    authorize_scoped(&caller.principal, Action::MonitorOwn, Action::MonitorAny, &owner)?;
    let j = portal.engine.job(&job)?;
    let art = match which {
        Stream::Stdout => j.stdout_ref,
        Stream::Stderr => j.stderr_ref,
    };
    let art = art.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_captured", format!("job {job} has no captured streams yet")))?;
    Ok(raw(portal.engine.read_artifact(&art)?))
}

async fn job_stdout(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(job): Path<String>,
) -> ApiResult<Response> {
    job_stream(portal, caller, job, Stream::Stdout).await
}

async fn job_stderr(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(job): Path<String>,
) -> ApiResult<Response> {
    job_stream(portal, caller, job, Stream::Stderr).await
}

async fn job_output(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path((job, name)): Path<(String, String)>,
) -> ApiResult<Response> {
    let owner = job_owner(&portal, &job)?;
    authorize_scoped(&caller.principal, Action::MonitorOwn, Action::MonitorAny, &owner)?;
    let j = portal.engine.job(&job)?;
    let art = j
        .output(&name)
        .ok_or_else(|| ApiError::not_found(format!("job {job} has no output {name}")))?;
    Ok(raw(portal.engine.read_artifact(art)?))
}

async fn resubmit_job(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(job): Path<String>,
) -> ApiResult<Json<Value>> {
    let owner = job_owner(&portal, &job)?;
    authorize(&caller.principal, Action::Resubmit, Some(&owner))?;
    let engine = portal.engine.clone();
    let jid = job.clone();
    let attempt = blocking(move || Ok(engine.resubmit_failed(&jid)?)).await?;
    Ok(Json(json!({"job": job, "attempt": attempt})))
}

async fn list_backends(State(portal): State<Arc<Portal>>) -> Json<Value> {
    Json(serde_json::to_value(portal.engine.bridge().list()).unwrap_or(Value::Null))
}

async fn add_backend(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    authorize(&caller.principal, Action::ManageBackends, None)?;
    let desc: BackendDescriptor = parse_body(&body)?;
    let id = portal.add_backend(desc)?;
    let info = portal
        .engine
        .bridge()
        .list()
        .into_iter()
        .find(|b| b.descriptor.id == id)
        .ok_or_else(|| ApiError::internal("backend vanished after registration"))?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn list_users(State(portal): State<Arc<Portal>>, Extension(caller): Extension<Caller>) -> ApiResult<Json<Value>> {
    authorize(&caller.principal, Action::ManageUsers, None)?;
    Ok(Json(serde_json::to_value(portal.accounts.list_users()).unwrap_or(Value::Null)))
}

#[derive(Deserialize)]
struct NewUser {
    username: String,
    password: String,
    role: Role,
    #[serde(default = "yes")]
    active: bool,
}

async fn create_user(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    authorize(&caller.principal, Action::ManageUsers, None)?;
    let u: NewUser = parse_body(&body)?;
    let view = blocking(move || Ok(portal.accounts.create_user(&u.username, &u.password, u.role, u.active)?)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn update_user(
    State(portal): State<Arc<Portal>>,
    Extension(caller): Extension<Caller>,
    Path(name): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    authorize(&caller.principal, Action::ManageUsers, None)?;
    let update: UserUpdate = parse_body(&body)?;
    let view = blocking(move || Ok(portal.accounts.update_user(&name, update)?)).await?;
    Ok(Json(serde_json::to_value(view).unwrap_or(Value::Null)))
}
