use std::collections::{HashMap, VecDeque};
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::Value;

use super::session::SessionKey;
use super::{
    ActionOutcome, ActionRequest, ApiError, CreateRequest, LoginRequest, LoginResponse, RestoreRequest,
    RevokeRequest,
};
use crate::dyndns::http::{spawn_router, HttpHandle};
use crate::lifecycle::Orchestrator;
use crate::registry::Action;
use crate::security::Caller;

const IDEMPOTENCY_CAPACITY: usize = 4096;

type Outcome = (u16, Value);
type Slot = Arc<tokio::sync::Mutex<Option<Outcome>>>;

/// Outcomes of action requests by (user, database, token). Bounded, oldest evicted first.
#[derive(Default)]
struct IdempotencyCache {
    slots: HashMap<(String, String, String), Slot>,
    order: VecDeque<(String, String, String)>,
}

impl IdempotencyCache {
    fn slot(&mut self, key: (String, String, String)) -> Slot {
        if let Some(s) = self.slots.get(&key) {
            return s.clone();
        }
        if self.order.len() >= IDEMPOTENCY_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.slots.remove(&old);
            }
        }
        let s = Slot::default();
        self.order.push_back(key.clone());
        self.slots.insert(key, s.clone());
        s
    }
}

struct AppState {
    orch: Orchestrator,
    key: SessionKey,
    idem: Mutex<IdempotencyCache>,
}

type Shared = Arc<AppState>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (code, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn now() -> i64 {
    chrono::Utc::now().timestamp()
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(500, "Internal", e.to_string())))
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn session(state: &AppState, headers: &HeaderMap) -> ApiResult<Caller> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
    let user = state
        .key
        .verify(token.trim(), now())
        .ok_or_else(|| ApiError::unauthenticated("invalid or expired session token"))?;
    state
        .orch
        .caller(&user)
        .map_err(|_| ApiError::unauthenticated(format!("user `{user}` is no longer known")))
}

fn ok<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

async fn login(State(st): State<Shared>, payload: Result<Json<LoginRequest>, JsonRejection>) -> ApiResult<Response> {
    let req = body(payload)?;
    let caller = st
        .orch
        .caller(&req.user)
        .map_err(|_| ApiError::unauthenticated(format!("unknown user `{}`", req.user)))?;
    Ok(ok(LoginResponse {
        token: st.key.mint(&caller.user, now()),
        user: caller.user,
        groups: caller.groups.into_iter().collect(),
        admin: caller.admin,
    }))
}

async fn list(State(st): State<Shared>, headers: HeaderMap) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    Ok(ok(st.orch.list(&caller)))
}

async fn create(
    State(st): State<Shared>,
    headers: HeaderMap,
    payload: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let req = body(payload)?;
    let orch = st.orch.clone();
    let desc = blocking(move || Ok(orch.db_create(req.engine, req.num_nodes, &req.name, &req.group, &caller)?)).await?;
    Ok((StatusCode::CREATED, Json(desc)).into_response())
}

async fn info(State(st): State<Shared>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let orch = st.orch.clone();
    Ok(ok(blocking(move || Ok(orch.db_info(&name, &caller)?)).await?))
}

fn run_action(orch: &Orchestrator, name: &str, action: Action, caller: &Caller) -> ApiResult<ActionOutcome> {
    let outcome = |status, job_id, checkpoint| ActionOutcome {
        accepted: true,
        name: name.to_string(),
        action,
        status,
        job_id,
        checkpoint,
    };
    match action {
        Action::Start => {
            let j = orch.db_start(name, caller)?;
            Ok(outcome(j.status, Some(j.job_id), None))
        }
        Action::Stop => {
            let j = orch.db_stop(name, caller)?;
            Ok(outcome(j.status, Some(j.job_id), None))
        }
        Action::Checkpoint => {
            let c = orch.db_checkpoint(name, caller)?;
            Ok(outcome(orch.status(name)?.value, None, Some(c)))
        }
        Action::ViewInfo => Err(ApiError::bad_request("ViewInfo is GET /databases/{name}")),
    }
}

async fn action(
    State(st): State<Shared>,
    headers: HeaderMap,
    Path(name): Path<String>,
    payload: Result<Json<ActionRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let req = body(payload)?;
    if req.idempotency_token.is_empty() {
        return Err(ApiError::bad_request("idempotency_token must not be empty"));
    }
    let slot = st
        .idem
        .lock()
        .unwrap()
        .slot((caller.user.clone(), name.clone(), req.idempotency_token.clone()));
    let mut guard = slot.lock().await;
    if guard.is_none() {
        let orch = st.orch.clone();
        let r = blocking(move || run_action(&orch, &name, req.action, &caller)).await;
        *guard = Some(match r {
            Ok(o) => (200, serde_json::to_value(o).expect("outcome serializes")),
            Err(e) => (e.status, e.body()),
        });
    }
    let (status, v) = guard.clone().expect("filled above");
    Ok((StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), Json(v)).into_response())
}

async fn checkpoints(State(st): State<Shared>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let orch = st.orch.clone();
    Ok(ok(blocking(move || Ok(orch.list_checkpoints(&name, &caller)?)).await?))
}

async fn restore(
    State(st): State<Shared>,
    headers: HeaderMap,
    Path(name): Path<String>,
    payload: Result<Json<RestoreRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let req = body(payload)?;
    let orch = st.orch.clone();
    let status = blocking(move || {
        orch.db_restore(&name, &req.checkpoint, &caller)?;
        Ok(orch.status(&name)?)
    })
    .await?;
    Ok(ok(status))
}

async fn force_stop(State(st): State<Shared>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let orch = st.orch.clone();
    Ok(ok(blocking(move || Ok(orch.db_force_stop(&name, &caller)?)).await?))
}

async fn access_key(State(st): State<Shared>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let orch = st.orch.clone();
    Ok(ok(blocking(move || Ok(orch.locate_access_key(&name, &caller)?)).await?))
}

async fn revoke(
    State(st): State<Shared>,
    headers: HeaderMap,
    Path(name): Path<String>,
    payload: Result<Json<RevokeRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let caller = session(&st, &headers)?;
    let req = body(payload)?;
    let orch = st.orch.clone();
    Ok(ok(blocking(move || Ok(orch.revoke_user(&name, &req.user, &caller)?)).await?))
}

async fn no_route() -> ApiError {
    ApiError::new(404, "NoSuchRoute", "no such endpoint")
}

pub fn router(orch: Orchestrator, key: SessionKey) -> Router {
    let state = Arc::new(AppState {
        orch,
        key,
        idem: Mutex::default(),
    });
    Router::new()
        .route("/login", post(login))
        .route("/databases", get(list).post(create))
        .route("/databases/{name}", get(info))
        .route("/databases/{name}/actions", post(action))
        .route("/databases/{name}/checkpoints", get(checkpoints))
        .route("/databases/{name}/restore", post(restore))
        .route("/databases/{name}/force-stop", post(force_stop))
        .route("/databases/{name}/accesskey", get(access_key))
        .route("/databases/{name}/revoke", post(revoke))
        .route("/healthz", get(|| async { "ok" }))
        .fallback(no_route)
        .with_state(state)
}

/// The API server, running on its own thread.
pub struct Gateway {
    http: HttpHandle,
}

impl Gateway {
    /// Serve on the configured gateway address. The signing key lives under
    /// the state root so sessions outlive a restart.
    pub fn spawn(orch: Orchestrator) -> io::Result<Gateway> {
        let cfg = orch.config();
        let key = SessionKey::load_or_create(&cfg.state_root.join("gateway").join("session.key"))?;
        let addr = cfg.gateway_addr;
        Self::spawn_on(orch, key, addr)
    }

    pub fn spawn_on(orch: Orchestrator, key: SessionKey, addr: SocketAddr) -> io::Result<Gateway> {
        Ok(Gateway {
            http: spawn_router(router(orch, key), addr, "gateway")?,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.http.addr()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr())
    }

    pub fn shutdown(self) {
        self.http.shutdown();
    }
}
