//! Durable catalog of databases and their lifecycle status.
//!
//! The index lives at `<root>/registry.json`; each database's central folder
//! holds `descriptor.json`, `status.json` and an append-only `history.jsonl`.
//! [`Registry::transition`] is the single serialization point for lifecycle
//! changes: a per-database compare-and-set that persists before returning.

mod status;

pub use status::{Action, DatabaseStatus, StatusRecord, StatusValue};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engines::EngineKind;
use crate::fsutil;

pub const STATUS_FILE: &str = "status.json";
pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const HISTORY_FILE: &str = "history.jsonl";
const INDEX_FILE: &str = "registry.json";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatabaseId(pub String);

impl DatabaseId {
    pub fn new() -> Self {
        DatabaseId(uuid::Uuid::new_v4().to_string())
    }
}

impl Default for DatabaseId {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for DatabaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseDescriptor {
    pub id: DatabaseId,
    pub name: String,
    pub engine: EngineKind,
    pub engine_version: String,
    pub num_nodes: u32,
    pub security_group: String,
    pub central_path: PathBuf,
    pub created_at: DateTime<Utc>,
}

impl DatabaseDescriptor {
    /// The "Type" column: engine plus version.
    pub fn type_label(&self) -> String {
        format!("{} {}", self.engine, self.engine_version)
    }
}

/// One row of the status table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSummary {
    pub name: String,
    #[serde(rename = "type")]
    pub type_label: String,
    pub status: StatusValue,
    pub actions: BTreeSet<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionReceipt {
    pub name: String,
    pub from: StatusValue,
    pub to: StatusValue,
    pub since: DateTime<Utc>,
}

/// Extra fields a transition may set on the status record.
#[derive(Debug, Clone, Default)]
pub struct TransitionMeta {
    pub job_id: Option<String>,
    pub started_by: Option<String>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("database `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid database name `{0}`: must match [a-z][a-z0-9_-]{{0,62}}")]
    InvalidName(String),
    #[error("invalid node count {0}: must be at least 1")]
    InvalidNodeCount(u32),
    #[error("database `{0}` not found")]
    NotFound(String),
    #[error("database status is {actual}, expected {expected}")]
    WrongCurrentStatus {
        actual: StatusValue,
        expected: StatusValue,
    },
    #[error("transition {from} -> {to} is not permitted")]
    IllegalEdge { from: StatusValue, to: StatusValue },
    #[error("registry storage error: {0}")]
    Io(#[from] io::Error),
}

/// Names double as DNS labels, so the grammar is the label-safe subset
/// `[a-z][a-z0-9_-]{0,62}`.
pub fn validate_name(name: &str) -> Result<(), RegistryError> {
    let bytes = name.as_bytes();
    let ok = !bytes.is_empty()
        && bytes.len() <= 63
        && bytes[0].is_ascii_lowercase()
        && bytes[1..]
            .iter()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_' || *b == b'-');
    if ok {
        Ok(())
    } else {
        Err(RegistryError::InvalidName(name.to_string()))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    databases: BTreeMap<String, IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    id: DatabaseId,
    central_path: PathBuf,
}

struct Entry {
    descriptor: DatabaseDescriptor,
    status: Mutex<DatabaseStatus>,
}

pub struct Registry {
    root: PathBuf,
    entries: RwLock<BTreeMap<String, Arc<Entry>>>,
    index_lock: Mutex<()>,
}

impl Registry {
    /// Open (or initialize) the registry whose index lives under `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let index_path = root.join(INDEX_FILE);
        let index: Index = if index_path.exists() {
            fsutil::read_json(&index_path)?
        } else {
            Index::default()
        };
        let mut entries = BTreeMap::new();
        for (name, e) in index.databases {
            let descriptor: DatabaseDescriptor =
                fsutil::read_json(&e.central_path.join(DESCRIPTOR_FILE))?;
            let status: DatabaseStatus = fsutil::read_json(&e.central_path.join(STATUS_FILE))?;
            entries.insert(
                name,
                Arc::new(Entry {
                    descriptor,
                    status: Mutex::new(status),
                }),
            );
        }
        Ok(Registry {
            root,
            entries: RwLock::new(entries),
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    /// Register a database whose central folder already exists. Its status starts as Stopped.
    pub fn register(&self, descriptor: DatabaseDescriptor) -> Result<DatabaseId, RegistryError> {
        validate_name(&descriptor.name)?;
        if descriptor.num_nodes < 1 {
            return Err(RegistryError::InvalidNodeCount(descriptor.num_nodes));
        }
        let _index_guard = self.index_lock.lock().unwrap();
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateName(descriptor.name));
        }
        let central = &descriptor.central_path;
        if !central.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("central folder {} does not exist", central.display()),
            )
            .into());
        }
        let status = DatabaseStatus::stopped();
        fsutil::write_json(&central.join(DESCRIPTOR_FILE), &descriptor)?;
        fsutil::write_json(&central.join(STATUS_FILE), &status)?;
        append_history(central, &status, false)?;

        let mut index = self.snapshot_index(&entries);
        index.databases.insert(
            descriptor.name.clone(),
            IndexEntry {
                id: descriptor.id.clone(),
                central_path: central.clone(),
            },
        );
        fsutil::write_json(&self.index_path(), &index)?;

        let id = descriptor.id.clone();
        entries.insert(
            descriptor.name.clone(),
            Arc::new(Entry {
                descriptor,
                status: Mutex::new(status),
            }),
        );
        Ok(id)
    }

    fn snapshot_index(&self, entries: &BTreeMap<String, Arc<Entry>>) -> Index {
        Index {
            databases: entries
                .iter()
                .map(|(n, e)| {
                    (
                        n.clone(),
                        IndexEntry {
                            id: e.descriptor.id.clone(),
                            central_path: e.descriptor.central_path.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    fn entry(&self, name: &str) -> Result<Arc<Entry>, RegistryError> {
        self.entries
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.read().unwrap().contains_key(name)
    }

    pub fn descriptor(&self, name: &str) -> Result<DatabaseDescriptor, RegistryError> {
        Ok(self.entry(name)?.descriptor.clone())
    }

    pub fn get_status(&self, name: &str) -> Result<DatabaseStatus, RegistryError> {
        Ok(self.entry(name)?.status.lock().unwrap().clone())
    }

    /// Compare-and-set `from -> to`. Exactly one of several concurrent callers
    /// proposing the same edge wins; the rest see `WrongCurrentStatus`.
    pub fn transition(
        &self,
        name: &str,
        from: StatusValue,
        to: StatusValue,
        meta: TransitionMeta,
    ) -> Result<TransitionReceipt, RegistryError> {
        let entry = self.entry(name)?;
        if !from.can_transition(to) {
            return Err(RegistryError::IllegalEdge { from, to });
        }
        let mut status = entry.status.lock().unwrap();
        if status.value != from {
            return Err(RegistryError::WrongCurrentStatus {
                actual: status.value,
                expected: from,
            });
        }
        let next = next_status(&status, to, meta);
        persist_status(&entry.descriptor.central_path, &next, false)?;
        let receipt = TransitionReceipt {
            name: name.to_string(),
            from,
            to,
            since: next.since,
        };
        *status = next;
        Ok(receipt)
    }

    /// Administrative override used by crash recovery: set Stopped regardless
    /// of the edge graph. The history entry is flagged as forced.
    pub fn force_stopped(&self, name: &str) -> Result<DatabaseStatus, RegistryError> {
        let entry = self.entry(name)?;
        let mut status = entry.status.lock().unwrap();
        let next = DatabaseStatus::stopped();
        persist_status(&entry.descriptor.central_path, &next, true)?;
        *status = next.clone();
        Ok(next)
    }

    pub fn history(&self, name: &str) -> Result<Vec<StatusRecord>, RegistryError> {
        let entry = self.entry(name)?;
        let _guard = entry.status.lock().unwrap();
        let text = std::fs::read_to_string(entry.descriptor.central_path.join(HISTORY_FILE))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e).into())
            })
            .collect()
    }

    /// Summaries of databases whose security group is one of `caller_groups`, sorted by name.
    pub fn list_databases(&self, caller_groups: &BTreeSet<String>) -> Vec<DatabaseSummary> {
        let entries: Vec<Arc<Entry>> = self.entries.read().unwrap().values().cloned().collect();
        entries
            .iter()
            .filter(|e| caller_groups.contains(&e.descriptor.security_group))
            .map(|e| {
                let status = e.status.lock().unwrap().value;
                DatabaseSummary {
                    name: e.descriptor.name.clone(),
                    type_label: e.descriptor.type_label(),
                    status,
                    actions: status.permitted_actions(),
                }
            })
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.read().unwrap().keys().cloned().collect()
    }
}

fn next_status(cur: &DatabaseStatus, to: StatusValue, meta: TransitionMeta) -> DatabaseStatus {
    let (job_id, started_by) = match to {
        StatusValue::Stopped => (None, None),
        StatusValue::Starting => (meta.job_id.or_else(|| cur.job_id.clone()), meta.started_by),
        StatusValue::Checkpointing => (meta.job_id, None),
        StatusValue::Started | StatusValue::Stopping => (
            meta.job_id.or_else(|| cur.job_id.clone()),
            meta.started_by.or_else(|| cur.started_by.clone()),
        ),
    };
    DatabaseStatus {
        value: to,
        since: Utc::now(),
        job_id,
        started_by,
    }
}

fn persist_status(central: &Path, status: &DatabaseStatus, forced: bool) -> io::Result<()> {
    fsutil::write_json(&central.join(STATUS_FILE), status)?;
    append_history(central, status, forced)
}

fn append_history(central: &Path, status: &DatabaseStatus, forced: bool) -> io::Result<()> {
    let rec = StatusRecord {
        value: status.value,
        since: status.since,
        job_id: status.job_id.clone(),
        forced,
    };
    let line = serde_json::to_string(&rec).map_err(io::Error::other)?;
    fsutil::append_line(&central.join(HISTORY_FILE), &line)
}
