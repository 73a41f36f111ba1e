use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// The five lifecycle states a database can be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusValue {
    Stopped,
    Starting,
    Started,
    Stopping,
    Checkpointing,
}

impl StatusValue {
    pub const ALL: [StatusValue; 5] = [
        StatusValue::Stopped,
        StatusValue::Starting,
        StatusValue::Started,
        StatusValue::Stopping,
        StatusValue::Checkpointing,
    ];

    /// Whether `self -> to` is one of the permitted lifecycle edges.
    pub fn can_transition(self, to: StatusValue) -> bool {
        use StatusValue::*;
        matches!(
            (self, to),
            (Stopped, Starting)
                | (Starting, Started)
                | (Starting, Stopping)
                | (Started, Stopping)
                | (Stopping, Stopped)
                | (Stopped, Checkpointing)
                | (Checkpointing, Stopped)
        )
    }

    pub fn is_transient(self) -> bool {
        !matches!(self, StatusValue::Stopped | StatusValue::Started)
    }

    /// Actions a status-table row offers in this state.
    pub fn permitted_actions(self) -> BTreeSet<Action> {
        use Action::*;
        match self {
            StatusValue::Stopped => [Start, Checkpoint, ViewInfo].into(),
            StatusValue::Started => [Stop, ViewInfo].into(),
            _ => [ViewInfo].into(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatusValue::Stopped => "stopped",
            StatusValue::Starting => "starting",
            StatusValue::Started => "started",
            StatusValue::Stopping => "stopping",
            StatusValue::Checkpointing => "checkpointing",
        }
    }
}

impl fmt::Display for StatusValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatusValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StatusValue::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

/// Buttons of the status table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Start,
    Stop,
    Checkpoint,
    ViewInfo,
}

/// Durable status record, stored as `status.json` in the database's central folder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseStatus {
    pub value: StatusValue,
    pub since: DateTime<Utc>,
    pub job_id: Option<String>,
    pub started_by: Option<String>,
}

impl DatabaseStatus {
    pub fn stopped() -> Self {
        DatabaseStatus {
            value: StatusValue::Stopped,
            since: Utc::now(),
            job_id: None,
            started_by: None,
        }
    }
}

/// One entry of a database's status history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub value: StatusValue,
    pub since: DateTime<Utc>,
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}
