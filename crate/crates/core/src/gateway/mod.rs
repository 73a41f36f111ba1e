//! HTTP/JSON API over the orchestrator, and the blocking client the CLI uses.
//!
//! Every request except `POST /login` carries `Authorization: Bearer <token>`.
//! Errors are `{"error": {"code", "message", "details"?}}`.

pub mod client;
mod server;
mod session;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engines::EngineKind;
use crate::lifecycle::{CheckpointId, LifecycleError};
use crate::registry::{Action, StatusValue};

pub use client::{ApiClient, ApiFailure};
pub use server::{router, Gateway};
pub use session::{SessionKey, TOKEN_TTL_SECS};

/// A structured API error, as sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            details: None,
        }
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(401, "Unauthenticated", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "BadRequest", message)
    }

    pub fn body(&self) -> Value {
        json!({ "error": self })
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        let details = match &e {
            LifecycleError::InsufficientResources { free, requested } => {
                Some(json!({ "free": free, "requested": requested }))
            }
            LifecycleError::WrongCurrentStatus { actual, expected } => {
                Some(json!({ "actual": actual, "expected": expected }))
            }
            _ => None,
        };
        ApiError {
            status: e.http_status(),
            code: e.code().to_string(),
            message: e.to_string(),
            details,
        }
    }
}

/// CLI exit code for an HTTP status.
pub fn exit_code_for_status(status: u16) -> i32 {
    match status {
        200..=299 => 0,
        400 | 404 | 422 => 2,
        401 | 403 => 3,
        409 => 4,
        503 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub user: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub user: String,
    pub groups: Vec<String>,
    pub admin: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub engine: EngineKind,
    pub num_nodes: u32,
    pub name: String,
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action: Action,
    pub idempotency_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub accepted: bool,
    pub name: String,
    pub action: Action,
    pub status: StatusValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub checkpoint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevokeRequest {
    pub user: String,
}
