//! Dynamic DNS sub-zone.
//!
//! Records are low-TTL A records under a configured zone. The table is
//! persisted as a JSON snapshot plus an append-only operation log, served over
//! UDP ([`server`]) and managed over HTTP ([`http`]). Databases register
//! `<db>` for their master node and `<db>-<i>` for node `i` of the job.

pub mod client;
pub mod http;
pub mod server;
pub mod wire;

use std::collections::BTreeMap;
use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

pub use client::DnsClient;
pub use server::DnsServer;

const SNAPSHOT_FILE: &str = "records.json";
const LOG_FILE: &str = "records.log";
const COMPACT_AFTER: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneConfig {
    /// Absolute zone name, e.g. `db.supercloud.test.`.
    pub zone: String,
    pub default_ttl: u32,
    pub ttl_max: u32,
    pub udp_addr: SocketAddr,
    pub http_addr: SocketAddr,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        ZoneConfig {
            zone: "db.supercloud.test.".into(),
            default_ttl: 5,
            ttl_max: 60,
            udp_addr: "127.0.0.1:5353".parse().unwrap(),
            http_addr: "127.0.0.1:8053".parse().unwrap(),
        }
    }
}

impl ZoneConfig {
    pub fn validate(&self) -> Result<(), DnsError> {
        if !self.zone.ends_with('.') || !valid_labels(self.zone.trim_end_matches('.')) {
            return Err(DnsError::InvalidZone(self.zone.clone()));
        }
        if self.default_ttl == 0 || self.default_ttl > self.ttl_max {
            return Err(DnsError::TtlTooHigh {
                ttl: self.default_ttl,
                max: self.ttl_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsRecord {
    pub fqdn: String,
    pub rtype: String,
    pub address: Ipv4Addr,
    pub ttl_seconds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Found(DnsRecord),
    NxDomain,
    /// The name is not under the configured zone.
    OutOfZone,
}

impl Resolution {
    pub fn address(&self) -> Option<Ipv4Addr> {
        match self {
            Resolution::Found(r) => Some(r.address),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DnsError {
    #[error("invalid record name `{0}`")]
    InvalidName(String),
    #[error("invalid zone `{0}`")]
    InvalidZone(String),
    #[error("ttl {ttl} exceeds the zone maximum of {max}")]
    TtlTooHigh { ttl: u32, max: u32 },
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("address {0} already in use")]
    PortInUse(SocketAddr),
    #[error("dns i/o error: {0}")]
    Io(#[from] io::Error),
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label.len() <= 63
        && !label.starts_with('-')
        && !label.ends_with('-')
        && label
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

fn valid_labels(name: &str) -> bool {
    !name.is_empty() && name.split('.').all(valid_label)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum LogOp {
    Upsert(DnsRecord),
    Delete { fqdn: String },
}

type Table = BTreeMap<String, DnsRecord>;

struct Store {
    dir: PathBuf,
    log_len: usize,
}

/// The record table. Reads take a snapshot of the current map; writes
/// serialize on the store lock and publish a new snapshot.
pub struct DnsTable {
    config: ZoneConfig,
    records: RwLock<Arc<Table>>,
    store: Mutex<Option<Store>>,
}

impl DnsTable {
    pub fn in_memory(config: ZoneConfig) -> Result<Self, DnsError> {
        config.validate()?;
        Ok(DnsTable {
            config,
            records: RwLock::new(Arc::new(Table::new())),
            store: Mutex::new(None),
        })
    }

    /// Open a durable table stored under `dir`, replaying its operation log.
    pub fn open(config: ZoneConfig, dir: impl Into<PathBuf>) -> Result<Self, DnsError> {
        config.validate()?;
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut table: Table = match fsutil::read_json(&dir.join(SNAPSHOT_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Table::new(),
            Err(e) => return Err(e.into()),
        };
        let mut log_len = 0;
        if let Ok(text) = std::fs::read_to_string(dir.join(LOG_FILE)) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                // A torn final line from a crash is skipped.
                let Ok(op) = serde_json::from_str::<LogOp>(line) else {
                    continue;
                };
                apply(&mut table, op);
                log_len += 1;
            }
        }
        Ok(DnsTable {
            config,
            records: RwLock::new(Arc::new(table)),
            store: Mutex::new(Some(Store { dir, log_len })),
        })
    }

    pub fn config(&self) -> &ZoneConfig {
        &self.config
    }

    pub fn zone(&self) -> &str {
        &self.config.zone
    }

    /// Absolute name for a relative label sequence, or validation of an
    /// already-absolute one.
    pub fn fqdn(&self, name: &str) -> Result<String, DnsError> {
        let lower = name.to_ascii_lowercase();
        let fqdn = if lower.ends_with('.') {
            lower
        } else {
            format!("{lower}.{}", self.config.zone)
        };
        let Some(relative) = fqdn.strip_suffix(&self.config.zone) else {
            return Err(DnsError::InvalidName(name.to_string()));
        };
        let relative = relative.trim_end_matches('.');
        if !valid_labels(relative) || fqdn.len() > 254 {
            return Err(DnsError::InvalidName(name.to_string()));
        }
        Ok(fqdn)
    }

    fn snapshot(&self) -> Arc<Table> {
        self.records.read().unwrap().clone()
    }

    pub fn upsert_record(
        &self,
        name: &str,
        address: Ipv4Addr,
        ttl: Option<u32>,
    ) -> Result<DnsRecord, DnsError> {
        let fqdn = self.fqdn(name)?;
        let ttl = ttl.unwrap_or(self.config.default_ttl);
        if ttl == 0 {
            return Err(DnsError::InvalidTtl);
        }
        if ttl > self.config.ttl_max {
            return Err(DnsError::TtlTooHigh {
                ttl,
                max: self.config.ttl_max,
            });
        }
        let record = DnsRecord {
            fqdn,
            rtype: "A".into(),
            address,
            ttl_seconds: ttl,
        };
        self.commit(LogOp::Upsert(record.clone()))?;
        Ok(record)
    }

    /// Remove a record. Removing an absent name is a no-op.
    pub fn delete_record(&self, name: &str) -> Result<(), DnsError> {
        let fqdn = self.fqdn(name)?;
        if !self.snapshot().contains_key(&fqdn) {
            return Ok(());
        }
        self.commit(LogOp::Delete { fqdn })
    }

    fn commit(&self, op: LogOp) -> Result<(), DnsError> {
        let mut store = self.store.lock().unwrap();
        if let Some(store) = store.as_mut() {
            let line = serde_json::to_string(&op).map_err(io::Error::other)?;
            fsutil::append_line(&store.dir.join(LOG_FILE), &line)?;
            store.log_len += 1;
        }
        let mut next = (*self.snapshot()).clone();
        apply(&mut next, op);
        let next = Arc::new(next);
        *self.records.write().unwrap() = next.clone();
        if let Some(store) = store.as_mut() {
            if store.log_len >= COMPACT_AFTER {
                compact(&store.dir, &next)?;
                store.log_len = 0;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, name: &str) -> Resolution {
        let lower = name.to_ascii_lowercase();
        let fqdn = if lower.ends_with('.') {
            lower
        } else {
            format!("{lower}.{}", self.config.zone)
        };
        if !in_zone(&fqdn, &self.config.zone) {
            return Resolution::OutOfZone;
        }
        match self.snapshot().get(&fqdn) {
            Some(r) => Resolution::Found(r.clone()),
            None => Resolution::NxDomain,
        }
    }

    pub fn records(&self) -> Vec<DnsRecord> {
        self.snapshot().values().cloned().collect()
    }

    /// Records whose fqdn is `<db>` or `<db>-<n>` under the zone.
    pub fn records_for_database(&self, db: &str) -> Vec<DnsRecord> {
        let master = format!("{db}.{}", self.config.zone);
        let prefix = format!("{db}-");
        self.snapshot()
            .values()
            .filter(|r| {
                r.fqdn == master
                    || r.fqdn
                        .strip_prefix(&prefix)
                        .and_then(|rest| rest.strip_suffix(&self.config.zone))
                        .and_then(|idx| idx.strip_suffix('.'))
                        .is_some_and(|idx| !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()))
            })
            .cloned()
            .collect()
    }

    /// Wire answer for a question: `(rcode, authoritative, answers)`.
    pub fn answer(&self, qname: &str, qtype: u16) -> (u8, bool, Vec<(Ipv4Addr, u32)>) {
        match self.resolve(qname) {
            Resolution::OutOfZone => (wire::RCODE_REFUSED, false, vec![]),
            Resolution::NxDomain => (wire::RCODE_NXDOMAIN, true, vec![]),
            Resolution::Found(r) => {
                if qtype == wire::TYPE_A || qtype == wire::TYPE_ANY {
                    (wire::RCODE_NOERROR, true, vec![(r.address, r.ttl_seconds)])
                } else {
                    (wire::RCODE_NOERROR, true, vec![])
                }
            }
        }
    }
}

fn in_zone(fqdn: &str, zone: &str) -> bool {
    fqdn == zone
        || fqdn
            .strip_suffix(zone)
            .is_some_and(|rest| rest.ends_with('.'))
}

fn apply(table: &mut Table, op: LogOp) {
    match op {
        LogOp::Upsert(r) => {
            table.insert(r.fqdn.clone(), r);
        }
        LogOp::Delete { fqdn } => {
            table.remove(&fqdn);
        }
    }
}

fn compact(dir: &Path, table: &Table) -> io::Result<()> {
    fsutil::write_json(&dir.join(SNAPSHOT_FILE), table)?;
    fsutil::atomic_write(&dir.join(LOG_FILE), b"")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> DnsTable {
        DnsTable::in_memory(ZoneConfig::default()).unwrap()
    }

    const IP1: Ipv4Addr = Ipv4Addr::new(127, 64, 0, 1);
    const IP2: Ipv4Addr = Ipv4Addr::new(127, 64, 0, 2);

    #[test]
    fn upsert_then_resolve_uses_default_ttl() {
        let t = table();
        t.upsert_record("dbname01", IP1, None).unwrap();
        match t.resolve("dbname01") {
            Resolution::Found(r) => {
                assert_eq!(r.address, IP1);
                assert_eq!(r.ttl_seconds, 5);
                assert_eq!(r.fqdn, "dbname01.db.supercloud.test.");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn upsert_updates_in_place() {
        let t = table();
        t.upsert_record("dbname01", IP1, None).unwrap();
        t.upsert_record("dbname01", IP2, Some(10)).unwrap();
        assert_eq!(t.records().len(), 1);
        assert_eq!(t.resolve("DBNAME01.db.supercloud.test.").address(), Some(IP2));
    }

    #[test]
    fn ttl_policy() {
        let t = table();
        assert!(matches!(
            t.upsert_record("x", IP1, Some(86400)),
            Err(DnsError::TtlTooHigh { ttl: 86400, max: 60 })
        ));
        assert!(matches!(t.upsert_record("x", IP1, Some(0)), Err(DnsError::InvalidTtl)));
        t.upsert_record("x", IP1, Some(60)).unwrap();
    }

    #[test]
    fn delete_is_idempotent_and_targeted() {
        let t = table();
        t.delete_record("absent").unwrap();
        t.upsert_record("a", IP1, None).unwrap();
        t.upsert_record("b", IP2, None).unwrap();
        t.delete_record("a").unwrap();
        assert_eq!(t.resolve("a"), Resolution::NxDomain);
        assert_eq!(t.resolve("b").address(), Some(IP2));
    }

    #[test]
    fn names_outside_zone() {
        let t = table();
        assert!(matches!(
            t.upsert_record("www.example.com.", IP1, None),
            Err(DnsError::InvalidName(_))
        ));
        assert!(matches!(t.upsert_record("bad..x", IP1, None), Err(DnsError::InvalidName(_))));
        assert!(matches!(t.upsert_record("-x", IP1, None), Err(DnsError::InvalidName(_))));
        assert_eq!(t.resolve("www.example.com."), Resolution::OutOfZone);
        // a name that merely ends with the zone text is not inside it
        assert_eq!(t.resolve("xdb.supercloud.test."), Resolution::OutOfZone);
        assert_eq!(t.resolve("nothere"), Resolution::NxDomain);
    }

    #[test]
    fn answers_by_type() {
        let t = table();
        t.upsert_record("d", IP1, None).unwrap();
        let fq = "d.db.supercloud.test.";
        assert_eq!(t.answer(fq, wire::TYPE_A), (0, true, vec![(IP1, 5)]));
        assert_eq!(t.answer(fq, wire::TYPE_AAAA), (0, true, vec![]));
        assert_eq!(t.answer("e.db.supercloud.test.", wire::TYPE_A).0, 3);
        assert_eq!(t.answer("example.org.", wire::TYPE_A).0, 5);
    }

    #[test]
    fn database_record_filter() {
        let t = table();
        for n in ["db", "db-0", "db-1", "db-x", "dbx", "db-1-2"] {
            t.upsert_record(n, IP1, None).unwrap();
        }
        let mut names: Vec<_> = t
            .records_for_database("db")
            .into_iter()
            .map(|r| r.fqdn)
            .collect();
        names.sort();
        assert_eq!(
            names,
            [
                "db-0.db.supercloud.test.",
                "db-1.db.supercloud.test.",
                "db.db.supercloud.test."
            ]
        );
    }

    #[test]
    fn durable_across_reopen_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        {
            let t = DnsTable::open(ZoneConfig::default(), dir.path()).unwrap();
            for i in 0..(COMPACT_AFTER + 10) {
                t.upsert_record(&format!("n{}", i % 7), Ipv4Addr::new(127, 64, 1, (i % 200) as u8), None)
                    .unwrap();
            }
            t.delete_record("n3").unwrap();
        }
        let t = DnsTable::open(ZoneConfig::default(), dir.path()).unwrap();
        assert_eq!(t.records().len(), 6);
        assert_eq!(t.resolve("n3"), Resolution::NxDomain);
        let last = COMPACT_AFTER + 9;
        assert_eq!(
            t.resolve(&format!("n{}", last % 7)).address(),
            Some(Ipv4Addr::new(127, 64, 1, (last % 200) as u8))
        );
    }
}
