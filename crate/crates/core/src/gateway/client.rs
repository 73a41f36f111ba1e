//! Blocking client for the gateway API.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::{exit_code_for_status, ActionOutcome, ActionRequest, ApiError, CreateRequest, LoginResponse};
use crate::engines::EngineKind;
use crate::lifecycle::{CheckpointMeta, DatabaseInfo, RevocationReport};
use crate::registry::{Action, DatabaseDescriptor, DatabaseStatus, DatabaseSummary, StatusValue};
use crate::security::AccessKey;

#[derive(Debug, Clone, PartialEq)]
pub enum ApiFailure {
    /// The server answered with an error payload.
    Api(ApiError),
    /// No usable answer: connection refused, timeout, malformed body.
    Transport(String),
}

impl ApiFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            ApiFailure::Api(e) => exit_code_for_status(e.status),
            ApiFailure::Transport(_) => 6,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ApiFailure::Api(e) => Some(e.status),
            ApiFailure::Transport(_) => None,
        }
    }
}

impl std::fmt::Display for ApiFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApiFailure::Api(e) => write!(f, "{}: {}", e.code, e.message),
            ApiFailure::Transport(m) => write!(f, "cannot reach the gateway: {m}"),
        }
    }
}

impl std::error::Error for ApiFailure {}

pub type ApiResult<T> = Result<T, ApiFailure>;

pub struct ApiClient {
    base: String,
    agent: ureq::Agent,
    token: Option<String>,
}

impl ApiClient {
    pub fn new(base: impl Into<String>) -> Self {
        ApiClient {
            base: base.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build(),
            token: None,
        }
    }

    /// Log in as `user` and keep the session token.
    pub fn login(base: impl Into<String>, user: &str) -> ApiResult<(Self, LoginResponse)> {
        let mut c = Self::new(base);
        let r: LoginResponse = c.call("POST", "/login", Some(json!({ "user": user })))?;
        c.token = Some(r.token.clone());
        Ok((c, r))
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    /// Status code and JSON body of a request, whatever the status.
    pub fn raw(&self, method: &str, path: &str, body: Option<Value>) -> Result<(u16, Value), String> {
        let mut req = self.agent.request(method, &format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(e.to_string()),
        };
        let status = resp.status();
        let text = resp.into_string().map_err(|e| e.to_string())?;
        let v = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        Ok((status, v))
    }

    fn call<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<Value>) -> ApiResult<T> {
        let (status, v) = self.raw(method, path, body).map_err(ApiFailure::Transport)?;
        if (200..300).contains(&status) {
            return serde_json::from_value(v).map_err(|e| ApiFailure::Transport(format!("unexpected response: {e}")));
        }
        let mut err: ApiError = v
            .get("error")
            .cloned()
            .and_then(|e| serde_json::from_value(e).ok())
            .unwrap_or_else(|| ApiError::new(status, "Unknown", v.to_string()));
        err.status = status;
        Err(ApiFailure::Api(err))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: impl Serialize) -> ApiResult<T> {
        self.call("POST", path, Some(serde_json::to_value(body).expect("request serializes")))
    }

    pub fn list(&self) -> ApiResult<Vec<DatabaseSummary>> {
        self.call("GET", "/databases", None)
    }

    pub fn create(&self, engine: EngineKind, num_nodes: u32, name: &str, group: &str) -> ApiResult<DatabaseDescriptor> {
        self.post(
            "/databases",
            CreateRequest {
                engine,
                num_nodes,
                name: name.to_string(),
                group: group.to_string(),
            },
        )
    }

    pub fn info(&self, name: &str) -> ApiResult<DatabaseInfo> {
        self.call("GET", &format!("/databases/{name}"), None)
    }

    pub fn action(&self, name: &str, action: Action, idempotency_token: &str) -> ApiResult<ActionOutcome> {
        self.post(
            &format!("/databases/{name}/actions"),
            ActionRequest {
                action,
                idempotency_token: idempotency_token.to_string(),
            },
        )
    }

    /// An action with a fresh idempotency token.
    pub fn act(&self, name: &str, action: Action) -> ApiResult<ActionOutcome> {
        self.action(name, action, &uuid::Uuid::new_v4().to_string())
    }

    pub fn checkpoints(&self, name: &str) -> ApiResult<Vec<CheckpointMeta>> {
        self.call("GET", &format!("/databases/{name}/checkpoints"), None)
    }

    pub fn restore(&self, name: &str, checkpoint: &str) -> ApiResult<DatabaseStatus> {
        self.post(&format!("/databases/{name}/restore"), json!({ "checkpoint": checkpoint }))
    }

    pub fn force_stop(&self, name: &str) -> ApiResult<DatabaseStatus> {
        self.post(&format!("/databases/{name}/force-stop"), json!({}))
    }

    pub fn access_key(&self, name: &str) -> ApiResult<AccessKey> {
        self.call("GET", &format!("/databases/{name}/accesskey"), None)
    }

    pub fn revoke(&self, name: &str, user: &str) -> ApiResult<RevocationReport> {
        self.post(&format!("/databases/{name}/revoke"), json!({ "user": user }))
    }

    /// Poll until the database leaves its transient status.
    pub fn wait_settled(&self, name: &str, timeout: Duration) -> ApiResult<StatusValue> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.info(name)?.status.value;
            if !s.is_transient() || Instant::now() >= deadline {
                return Ok(s);
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}
