//! Toy database engines.
//!
//! Two engine kinds with a fixed service graph each. Daemon services run as
//! real TCP servers on the node's IP; the rest are no-op or presence checks
//! that keep the start ordering of a real stack visible.
//!
//! Central layout:
//!
//! ```text
//! toy-kv        zookeeper/manifest.json    coordinator state, users.json
//!               hdfs/part-<i>/             worker i: tablet-XX.jsonl, wal.jsonl
//! toy-tabular   catalog/catalog.json       catalog state, users.json
//!               arrays/part-<i>/           worker i, same file layout
//! ```
//!
//! On a started database, node `i` holds its slice of this tree under
//! `<local_root>/<db>/`.

pub mod client;
pub mod daemon;
pub mod protocol;
pub mod runtime;

pub use client::{EngineClient, EnginePasswordSetter};
pub use daemon::{DaemonConfig, Role};
pub use runtime::{EngineSession, FaultSet, Launcher, NodeContext, StartEvent};

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::fsutil;

pub const DEFAULT_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineKind {
    #[serde(rename = "toy-kv", alias = "accumulo")]
    ToyKv,
    #[serde(rename = "toy-tabular", alias = "scidb")]
    ToyTabular,
}

impl EngineKind {
    pub const ALL: [EngineKind; 2] = [EngineKind::ToyKv, EngineKind::ToyTabular];

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::ToyKv => "toy-kv",
            EngineKind::ToyTabular => "toy-tabular",
        }
    }

    pub fn services(self) -> Vec<ServiceSpec> {
        use NodeScope::*;
        use ServiceKind::*;
        let s = |name, node_scope, kind, deps: &[&'static str]| ServiceSpec {
            name,
            node_scope,
            kind,
            depends_on: deps.to_vec(),
        };
        match self {
            EngineKind::ToyKv => vec![
                s("kerberos", AllNodes, NoOp, &[]),
                s("hdfs", AllNodes, Check, &["kerberos"]),
                s("zookeeper", MasterOnly, Check, &["kerberos"]),
                s("coordinator", MasterOnly, Daemon(Role::Coordinator), &["zookeeper", "hdfs"]),
                s("tablet", AllNodes, Daemon(Role::Worker), &["coordinator"]),
            ],
            EngineKind::ToyTabular => vec![
                s("catalog", MasterOnly, Daemon(Role::Coordinator), &[]),
                s("kerberos", AllNodes, NoOp, &[]),
                s("worker", AllNodes, Daemon(Role::Worker), &["catalog", "kerberos"]),
            ],
        }
    }

    /// Top-level central subtrees holding engine data. Restore replaces exactly these.
    pub fn data_subtrees(self) -> &'static [&'static str] {
        match self {
            EngineKind::ToyKv => &["zookeeper", "hdfs"],
            EngineKind::ToyTabular => &["catalog", "arrays"],
        }
    }

    fn coordinator_dir(self) -> &'static str {
        self.data_subtrees()[0]
    }

    fn partition_root(self) -> &'static str {
        self.data_subtrees()[1]
    }

    /// Relative paths node `idx` needs locally (and copies back on stop).
    pub fn node_subtrees(self, idx: u32) -> Vec<PathBuf> {
        let mut v = Vec::new();
        if idx == 0 {
            v.push(PathBuf::from(self.coordinator_dir()));
        }
        v.push(self.partition_dir(idx));
        v
    }

    pub fn partition_dir(self, idx: u32) -> PathBuf {
        Path::new(self.partition_root()).join(format!("part-{idx}"))
    }

    pub fn coordinator_data(self) -> PathBuf {
        PathBuf::from(self.coordinator_dir())
    }

    fn check_path(self, service: &str, idx: u32) -> Option<PathBuf> {
        match (self, service) {
            (EngineKind::ToyKv, "hdfs") => Some(self.partition_dir(idx)),
            (EngineKind::ToyKv, "zookeeper") => Some(Path::new("zookeeper").join("manifest.json")),
            _ => None,
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "toy-kv" | "accumulo" => Ok(EngineKind::ToyKv),
            "toy-tabular" | "scidb" => Ok(EngineKind::ToyTabular),
            _ => Err(format!("unknown engine `{s}` (expected toy-kv or toy-tabular)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeScope {
    MasterOnly,
    AllNodes,
}

impl NodeScope {
    pub fn runs_on(self, idx: u32) -> bool {
        self == NodeScope::AllNodes || idx == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    NoOp,
    /// Verifies the node holds the service's data before dependents start.
    Check,
    Daemon(Role),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSpec {
    pub name: &'static str,
    pub node_scope: NodeScope,
    pub kind: ServiceKind,
    pub depends_on: Vec<&'static str>,
}

/// Where a client reaches a daemon: always through its DNS name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineEndpoint {
    pub fqdn: String,
    pub port: u16,
    pub role: String,
}

/// Client-facing endpoints of a database, master first.
pub fn endpoints(kind: EngineKind, db_fqdn: &str, node_fqdns: &[String]) -> Vec<EngineEndpoint> {
    let front = match kind {
        EngineKind::ToyKv => "coordinator",
        EngineKind::ToyTabular => "catalog",
    };
    let mut v = vec![EngineEndpoint {
        fqdn: db_fqdn.to_string(),
        port: Role::Coordinator.port(),
        role: front.to_string(),
    }];
    v.extend(node_fqdns.iter().map(|f| EngineEndpoint {
        fqdn: f.clone(),
        port: Role::Worker.port(),
        role: "worker".to_string(),
    }));
    v
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("storage folder {0} is not empty")]
    NotEmpty(PathBuf),
    #[error("service `{0}` failed to start")]
    DependencyStartFailed(String),
    #[error("component authentication failed (shared secret mismatch)")]
    AuthMismatch,
    #[error("daemons did not exit within the grace period: {0:?}")]
    StopTimeout(Vec<String>),
    #[error("authentication failed")]
    AuthFailed,
    #[error("not authenticated")]
    NotAuthenticated,
    #[error("key not found")]
    KeyNotFound,
    #[error("engine error: {0}")]
    Remote(String),
    #[error("engine i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Lay down an empty engine image for `num_nodes` partitions.
pub fn init_storage(kind: EngineKind, central: &Path, num_nodes: u32) -> Result<(), EngineError> {
    fs::create_dir_all(central)?;
    if fs::read_dir(central)?.next().is_some() {
        return Err(EngineError::NotEmpty(central.to_path_buf()));
    }
    let coord = central.join(kind.coordinator_dir());
    fs::create_dir_all(&coord)?;
    match kind {
        EngineKind::ToyKv => fsutil::write_json(
            &coord.join("manifest.json"),
            &json!({"format": 1, "tables": [], "partitions": num_nodes}),
        )?,
        EngineKind::ToyTabular => fsutil::write_json(
            &coord.join("catalog.json"),
            &json!({"schema_version": 1, "arrays": [], "partitions": num_nodes}),
        )?,
    }
    for i in 0..num_nodes {
        let part = central.join(kind.partition_dir(i));
        fs::create_dir_all(&part)?;
        if kind == EngineKind::ToyTabular {
            fsutil::write_json(&part.join("manifest.json"), &json!({"partition": i, "arrays": []}))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn service_graphs_are_topologically_ordered() {
        for kind in EngineKind::ALL {
            let svcs = kind.services();
            let pos: HashMap<_, _> = svcs.iter().enumerate().map(|(i, s)| (s.name, i)).collect();
            for (i, s) in svcs.iter().enumerate() {
                for d in &s.depends_on {
                    assert!(pos[d] < i, "{kind}: {} before its dependency {d}", s.name);
                }
            }
        }
    }

    #[test]
    fn aliases_and_serde() {
        assert_eq!("accumulo".parse::<EngineKind>().unwrap(), EngineKind::ToyKv);
        assert_eq!("SciDB".parse::<EngineKind>().unwrap(), EngineKind::ToyTabular);
        assert!("postgres".parse::<EngineKind>().is_err());
        assert_eq!(serde_json::to_string(&EngineKind::ToyKv).unwrap(), "\"toy-kv\"");
        let k: EngineKind = serde_json::from_str("\"scidb\"").unwrap();
        assert_eq!(k, EngineKind::ToyTabular);
    }

    #[test]
    fn init_layouts() {
        let d = tempfile::tempdir().unwrap();
        let kv = d.path().join("kv");
        init_storage(EngineKind::ToyKv, &kv, 4).unwrap();
        let m: serde_json::Value = fsutil::read_json(&kv.join("zookeeper/manifest.json")).unwrap();
        assert_eq!(m["tables"].as_array().unwrap().len(), 0);
        for i in 0..4 {
            assert!(kv.join(format!("hdfs/part-{i}")).is_dir());
        }

        let tab = d.path().join("tab");
        init_storage(EngineKind::ToyTabular, &tab, 2).unwrap();
        let c: serde_json::Value = fsutil::read_json(&tab.join("catalog/catalog.json")).unwrap();
        assert_eq!(c["schema_version"], 1);
        assert!(tab.join("arrays/part-1/manifest.json").is_file());

        let busy = d.path().join("busy");
        fs::create_dir_all(&busy).unwrap();
        fs::write(busy.join("x"), "1").unwrap();
        assert!(matches!(
            init_storage(EngineKind::ToyKv, &busy, 1),
            Err(EngineError::NotEmpty(_))
        ));
    }

    #[test]
    fn node_subtrees_cover_data() {
        let k = EngineKind::ToyKv;
        assert_eq!(
            k.node_subtrees(0),
            vec![PathBuf::from("zookeeper"), PathBuf::from("hdfs/part-0")]
        );
        assert_eq!(k.node_subtrees(3), vec![PathBuf::from("hdfs/part-3")]);
    }
}
