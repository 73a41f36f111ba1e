//! The five database operations plus admin recovery.
//!
//! `db_start` and `db_stop` return as soon as the registry transition and the
//! scheduler call succeed; the prolog and epilog hooks in [`plans`] drive the
//! status the rest of the way. `db_checkpoint` waits for its single-node job.
//! `db_restore` is offline file surgery done under the per-database lock.

mod archive;
mod plans;

pub use archive::{CheckpointId, CheckpointMeta};
pub use plans::{RunBreadcrumb, START_STEPS, STOP_STEPS};

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustersim::{Cluster, ClusterError, JobSpec, Payload};
use crate::config::{DaemonMode, ServiceConfig};
use crate::dyndns::{DnsError, DnsServer, DnsTable};
use crate::engines::{self, EngineEndpoint, EngineKind, EngineSession, FaultSet, Launcher, StartEvent};
use crate::fsutil;
use crate::migrate::CopyMode;
use crate::registry::{
    validate_name, DatabaseDescriptor, DatabaseId, DatabaseStatus, DatabaseSummary, Registry,
    RegistryError, StatusRecord, StatusValue, TransitionMeta,
};
use crate::security::{
    self, AccessKey, AccessKeyStore, Caller, IdentityTable, RevocationPlan, RevocationState, SecurityError,
    SERVICE_IDENTITY,
};

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("database `{0}` not found")]
    NotFound(String),
    #[error("database `{0}` already exists")]
    DuplicateName(String),
    #[error("invalid database name `{0}`")]
    InvalidName(String),
    #[error("invalid node count {0}")]
    InvalidNodeCount(u32),
    #[error("database status is {actual}, expected {expected}")]
    WrongCurrentStatus { actual: StatusValue, expected: StatusValue },
    #[error("insufficient resources: {free} nodes free, {requested} requested")]
    InsufficientResources { free: u32, requested: u32 },
    #[error("engine initialization failed: {0}")]
    EngineInitFailed(String),
    #[error("checkpoint `{0}` not found")]
    CheckpointNotFound(String),
    #[error("checkpoint archive could not be written: {0}")]
    ArchiveFailed(String),
    #[error("checkpoint archive is corrupt: {0}")]
    ArchiveCorrupt(String),
    #[error("database `{0}` has no access key yet")]
    NoKeyYet(String),
    #[error("user `{user}` is not in group `{group}`")]
    UserNotInGroup { user: String, group: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl LifecycleError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use LifecycleError::*;
        match self {
            UnknownUser(_) => "Unauthenticated",
            PermissionDenied(_) => "PermissionDenied",
            NotFound(_) => "NotFound",
            DuplicateName(_) => "DuplicateName",
            InvalidName(_) => "InvalidName",
            InvalidNodeCount(_) => "InvalidNodeCount",
            WrongCurrentStatus { .. } => "WrongCurrentStatus",
            InsufficientResources { .. } => "InsufficientResources",
            EngineInitFailed(_) => "EngineInitFailed",
            CheckpointNotFound(_) => "CheckpointNotFound",
            ArchiveFailed(_) => "ArchiveFailed",
            ArchiveCorrupt(_) => "ArchiveCorrupt",
            NoKeyYet(_) => "NoKeyYet",
            UserNotInGroup { .. } => "UserNotInGroup",
            Internal(_) => "Internal",
        }
    }

    /// HTTP status for the gateway.
    pub fn http_status(&self) -> u16 {
        use LifecycleError::*;
        match self {
            UnknownUser(_) => 401,
            PermissionDenied(_) => 403,
            NotFound(_) | CheckpointNotFound(_) | NoKeyYet(_) => 404,
            DuplicateName(_) | WrongCurrentStatus { .. } => 409,
            InvalidName(_) | InvalidNodeCount(_) | UserNotInGroup { .. } | ArchiveCorrupt(_) => 400,
            InsufficientResources { .. } => 503,
            EngineInitFailed(_) | ArchiveFailed(_) | Internal(_) => 500,
        }
    }
}

impl From<RegistryError> for LifecycleError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::DuplicateName(n) => LifecycleError::DuplicateName(n),
            RegistryError::InvalidName(n) => LifecycleError::InvalidName(n),
            RegistryError::InvalidNodeCount(n) => LifecycleError::InvalidNodeCount(n),
            RegistryError::NotFound(n) => LifecycleError::NotFound(n),
            RegistryError::WrongCurrentStatus { actual, expected } => {
                LifecycleError::WrongCurrentStatus { actual, expected }
            }
            RegistryError::IllegalEdge { from, to } => LifecycleError::WrongCurrentStatus {
                actual: from,
                expected: to,
            },
            RegistryError::Io(e) => LifecycleError::Internal(e.to_string()),
        }
    }
}

impl From<io::Error> for LifecycleError {
    fn from(e: io::Error) -> Self {
        LifecycleError::Internal(e.to_string())
    }
}

impl From<DnsError> for LifecycleError {
    fn from(e: DnsError) -> Self {
        LifecycleError::Internal(e.to_string())
    }
}

impl From<ClusterError> for LifecycleError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::InsufficientResources { free, requested } => {
                LifecycleError::InsufficientResources { free, requested }
            }
            ClusterError::InvalidNodeCount => LifecycleError::InvalidNodeCount(0),
            ClusterError::PermissionDenied => LifecycleError::PermissionDenied("not the job owner".into()),
            e => LifecycleError::Internal(e.to_string()),
        }
    }
}

impl From<SecurityError> for LifecycleError {
    fn from(e: SecurityError) -> Self {
        match e {
            SecurityError::PermissionDenied => LifecycleError::PermissionDenied("not in the database's group".into()),
            SecurityError::NoKeyYet(db) => LifecycleError::NoKeyYet(db),
            SecurityError::UserNotInGroup { user, group } => LifecycleError::UserNotInGroup { user, group },
            e => LifecycleError::Internal(e.to_string()),
        }
    }
}

pub type Result<T, E = LifecycleError> = std::result::Result<T, E>;

/// Everything View Info shows for a database.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatabaseInfo {
    pub descriptor: DatabaseDescriptor,
    #[serde(rename = "type")]
    pub type_label: String,
    pub status: DatabaseStatus,
    pub history: Vec<StatusRecord>,
    pub checkpoints: Vec<CheckpointMeta>,
    pub dns_names: Vec<String>,
    pub endpoints: Vec<EngineEndpoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStarted {
    pub name: String,
    pub job_id: String,
    pub status: StatusValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevocationReport {
    pub plan: RevocationPlan,
    pub state: RevocationState,
}

pub(crate) struct Inner {
    pub(crate) cfg: ServiceConfig,
    pub(crate) registry: Registry,
    pub(crate) cluster: Cluster,
    pub(crate) dns: DnsServer,
    pub(crate) identities: IdentityTable,
    pub(crate) keys: AccessKeyStore,
    pub(crate) launcher: Launcher,
    pub(crate) faults: Arc<FaultSet>,
    pub(crate) copy_mode: CopyMode,
    sessions: Mutex<HashMap<String, Arc<EngineSession>>>,
    last_events: Mutex<HashMap<String, Vec<StartEvent>>>,
    op_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Inner {
    pub(crate) fn table(&self) -> &DnsTable {
        self.dns.table()
    }

    fn op_lock(&self, name: &str) -> Arc<Mutex<()>> {
        self.op_locks.lock().unwrap().entry(name.to_string()).or_default().clone()
    }

    pub(crate) fn run_path(&self, name: &str) -> PathBuf {
        self.cfg.runs_dir().join(format!("{name}.json"))
    }

    pub(crate) fn local_dir(node_root: &Path, name: &str) -> PathBuf {
        node_root.join(name)
    }

    pub(crate) fn finish_session(&self, name: &str) {
        if let Some(s) = self.sessions.lock().unwrap().remove(name) {
            self.last_events.lock().unwrap().insert(name.to_string(), s.events());
        }
        let _ = fs::remove_file(self.run_path(name));
    }

    pub(crate) fn session(&self, name: &str) -> Option<Arc<EngineSession>> {
        self.sessions.lock().unwrap().get(name).cloned()
    }
}

/// Entry point for every lifecycle operation. Cheap to clone.
#[derive(Clone)]
pub struct Orchestrator {
    inner: Arc<Inner>,
}

/// Longest DNS label a database name can produce: `<name>-<max index>`.
fn check_dns_label_room(name: &str, num_nodes: u32) -> Result<()> {
    let digits = (num_nodes.saturating_sub(1)).to_string().len();
    if name.len() + 1 + digits > 63 {
        return Err(LifecycleError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl Orchestrator {
    pub fn open(cfg: ServiceConfig) -> Result<Orchestrator> {
        for d in [&cfg.state_root, &cfg.central_root, &cfg.keys_root] {
            fs::create_dir_all(d)?;
        }
        fs::create_dir_all(cfg.runs_dir())?;
        let registry = Registry::open(cfg.registry_dir())?;
        let cluster = Cluster::open(cfg.cluster.clone())?;
        cfg.dns.validate()?;
        let table = Arc::new(DnsTable::open(cfg.dns.clone(), cfg.dns_dir())?);
        let dns = if cfg.dns_http {
            DnsServer::serve(table)?
        } else {
            DnsServer::serve_udp(table, cfg.dns.udp_addr)?
        };
        let identities = IdentityTable::open(&cfg.identities)?;
        let launcher = match cfg.daemons {
            DaemonMode::InProcess => Launcher::InProcess,
            DaemonMode::Process => Launcher::Process {
                program: match &cfg.daemon_program {
                    Some(p) => p.clone(),
                    None => std::env::current_exe()?,
                },
            },
        };
        let copy_mode = cfg.copy_mode()?;
        Ok(Orchestrator {
            inner: Arc::new(Inner {
                keys: AccessKeyStore::new(cfg.keys_root.clone()),
                cfg,
                registry,
                cluster,
                dns,
                identities,
                launcher,
                faults: Arc::new(FaultSet::default()),
                copy_mode,
                sessions: Mutex::new(HashMap::new()),
                last_events: Mutex::new(HashMap::new()),
                op_locks: Mutex::new(HashMap::new()),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn registry(&self) -> &Registry {
        &self.inner.registry
    }

    pub fn cluster(&self) -> &Cluster {
        &self.inner.cluster
    }

    pub fn dns_table(&self) -> &DnsTable {
        self.inner.table()
    }

    pub fn dns_udp_addr(&self) -> SocketAddr {
        self.inner.dns.udp_addr()
    }

    pub fn dns_http_addr(&self) -> Option<SocketAddr> {
        self.inner.dns.http_addr()
    }

    pub fn identities(&self) -> &IdentityTable {
        &self.inner.identities
    }

    pub fn keys(&self) -> &AccessKeyStore {
        &self.inner.keys
    }

    pub fn faults(&self) -> &FaultSet {
        &self.inner.faults
    }

    /// Resolve a user name to a caller, or fail as unauthenticated.
    /// The service identity is not a user and never resolves here.
    pub fn caller(&self, user: &str) -> Result<Caller> {
        if user == SERVICE_IDENTITY {
            return Err(LifecycleError::UnknownUser(user.to_string()));
        }
        self.inner
            .identities
            .caller(user)
            .ok_or_else(|| LifecycleError::UnknownUser(user.to_string()))
    }

    fn require_admin(caller: &Caller, what: &str) -> Result<()> {
        if caller.admin {
            Ok(())
        } else {
            Err(LifecycleError::PermissionDenied(format!("{what} requires an administrator")))
        }
    }

    fn require_member(caller: &Caller, desc: &DatabaseDescriptor) -> Result<()> {
        if caller.in_group(&desc.security_group) {
            Ok(())
        } else {
            Err(LifecycleError::PermissionDenied(format!(
                "`{}` is not in group `{}`",
                caller.user, desc.security_group
            )))
        }
    }

    fn require_member_or_admin(caller: &Caller, desc: &DatabaseDescriptor) -> Result<()> {
        if caller.admin {
            return Ok(());
        }
        Self::require_member(caller, desc)
    }

    pub fn descriptor(&self, name: &str) -> Result<DatabaseDescriptor> {
        Ok(self.inner.registry.descriptor(name)?)
    }

    pub fn status(&self, name: &str) -> Result<DatabaseStatus> {
        Ok(self.inner.registry.get_status(name)?)
    }

    /// Rows visible to `caller`: their groups, or everything for an admin.
    pub fn list(&self, caller: &Caller) -> Vec<DatabaseSummary> {
        if caller.admin {
            let all: BTreeSet<String> = self
                .inner
                .registry
                .names()
                .iter()
                .filter_map(|n| self.inner.registry.descriptor(n).ok())
                .map(|d| d.security_group)
                .collect();
            return self.inner.registry.list_databases(&all);
        }
        self.inner.registry.list_databases(&caller.groups)
    }

    pub fn db_create(
        &self,
        engine: EngineKind,
        num_nodes: u32,
        name: &str,
        group: &str,
        caller: &Caller,
    ) -> Result<DatabaseDescriptor> {
        Self::require_admin(caller, "database creation")?;
        validate_name(name)?;
        if num_nodes == 0 {
            return Err(LifecycleError::InvalidNodeCount(num_nodes));
        }
        check_dns_label_room(name, num_nodes)?;
        if group.is_empty() {
            return Err(LifecycleError::InvalidName(group.to_string()));
        }
        if self.inner.registry.contains(name) {
            return Err(LifecycleError::DuplicateName(name.to_string()));
        }
        let central = self.inner.cfg.central_root.join(name);
        match fs::create_dir(&central) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(LifecycleError::DuplicateName(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
        let result = (|| {
            engines::init_storage(engine, &central, num_nodes)
                .map_err(|e| LifecycleError::EngineInitFailed(e.to_string()))?;
            security::provision_secrets(name, &central)?;
            let desc = DatabaseDescriptor {
                id: DatabaseId::new(),
                name: name.to_string(),
                engine,
                engine_version: engines::DEFAULT_VERSION.to_string(),
                num_nodes,
                security_group: group.to_string(),
                central_path: central.clone(),
                created_at: Utc::now(),
            };
            self.inner.registry.register(desc.clone())?;
            Ok(desc)
        })();
        if result.is_err() {
            let _ = fsutil::remove_tree(&central);
        }
        result
    }

    /// Begin starting a database. Returns once nodes are allocated.
    pub fn db_start(&self, name: &str, caller: &Caller) -> Result<JobStarted> {
        let desc = self.descriptor(name)?;
        Self::require_member(caller, &desc)?;
        let lock = self.inner.op_lock(name);
        let _g = lock.lock().unwrap();
        let job_id = self.inner.cluster.new_job_id();
        self.inner.registry.transition(
            name,
            StatusValue::Stopped,
            StatusValue::Starting,
            TransitionMeta {
                job_id: Some(job_id.clone()),
                started_by: Some(caller.user.clone()),
            },
        )?;
        let table = self.inner.table();
        let node_fqdns = (0..desc.num_nodes)
            .map(|i| table.fqdn(&format!("{name}-{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let session = Arc::new(EngineSession::new(
            desc.engine,
            name,
            desc.num_nodes,
            &desc.central_path,
            self.inner.dns.udp_addr(),
            table.fqdn(name)?,
            node_fqdns,
            self.inner.launcher.clone(),
            self.inner.faults.clone(),
        ));
        self.inner.sessions.lock().unwrap().insert(name.to_string(), session.clone());
        let hooks = Arc::new(plans::DbHooks::new(self.inner.clone(), desc.clone(), session));
        let mut spec = JobSpec::db(&caller.user, desc.num_nodes, hooks, Payload::Placeholder);
        spec.job_id = Some(job_id.clone());
        match self.inner.cluster.submit(spec) {
            Ok(handle) => {
                plans::write_breadcrumb(&self.inner, name, &handle.job_id, &handle.nodes, false, &[])?;
                Ok(JobStarted {
                    name: name.to_string(),
                    job_id,
                    status: StatusValue::Starting,
                })
            }
            Err(e) => {
                self.inner.sessions.lock().unwrap().remove(name);
                let reg = &self.inner.registry;
                reg.transition(name, StatusValue::Starting, StatusValue::Stopping, TransitionMeta::default())?;
                reg.transition(name, StatusValue::Stopping, StatusValue::Stopped, TransitionMeta::default())?;
                Err(e.into())
            }
        }
    }

    /// Begin stopping a started database.
    pub fn db_stop(&self, name: &str, caller: &Caller) -> Result<JobStarted> {
        let desc = self.descriptor(name)?;
        Self::require_member(caller, &desc)?;
        self.inner.registry.transition(
            name,
            StatusValue::Started,
            StatusValue::Stopping,
            TransitionMeta::default(),
        )?;
        let status = self.status(name)?;
        let job_id = status.job_id.clone().unwrap_or_default();
        match self.inner.cluster.signal_stop(&job_id) {
            Ok(()) | Err(ClusterError::WrongPhase(_)) => {}
            Err(e) => {
                tracing::error!(db = name, job = %job_id, "stop signal failed: {e}; use force-stop");
            }
        }
        Ok(JobStarted {
            name: name.to_string(),
            job_id,
            status: StatusValue::Stopping,
        })
    }

    /// Cancel the database's job through the scheduler (owner or admin).
    pub fn db_cancel(&self, name: &str, caller: &Caller) -> Result<()> {
        let status = self.status(name)?;
        let Some(job) = status.job_id.filter(|_| status.value.is_transient() || status.value == StatusValue::Started) else {
            return Err(LifecycleError::WrongCurrentStatus {
                actual: status.value,
                expected: StatusValue::Started,
            });
        };
        self.inner.cluster.cancel(&job, caller)?;
        Ok(())
    }

    /// Wait until the status satisfies `pred`; returns the last status seen.
    pub fn wait_status(&self, name: &str, timeout: Duration, pred: impl Fn(StatusValue) -> bool) -> Result<StatusValue> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.status(name)?.value;
            if pred(s) || Instant::now() >= deadline {
                return Ok(s);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Wait for a start or stop to settle in Started or Stopped.
    pub fn wait_settled(&self, name: &str, timeout: Duration) -> Result<StatusValue> {
        self.wait_status(name, timeout, |s| !s.is_transient())
    }

    pub fn db_checkpoint(&self, name: &str, caller: &Caller) -> Result<CheckpointId> {
        let desc = self.descriptor(name)?;
        Self::require_member(caller, &desc)?;
        let lock = self.inner.op_lock(name);
        let _g = lock.lock().unwrap();
        let job_id = self.inner.cluster.new_job_id();
        self.inner.registry.transition(
            name,
            StatusValue::Stopped,
            StatusValue::Checkpointing,
            TransitionMeta {
                job_id: Some(job_id.clone()),
                started_by: None,
            },
        )?;
        let id = archive::new_checkpoint_id(&desc.central_path);
        let (tx, rx) = mpsc::channel();
        let hooks = Arc::new(plans::CheckpointHooks::new(self.inner.clone(), name.to_string(), tx));
        let result: Arc<Mutex<Option<Result<CheckpointId>>>> = Arc::default();
        let task = {
            let result = result.clone();
            let central = desc.central_path.clone();
            let id = id.clone();
            let by = caller.user.clone();
            Box::new(move |_: &crate::clustersim::JobContext| {
                let r = archive::write_checkpoint(&central, &id, &by);
                let code = if r.is_ok() { 0 } else { 1 };
                *result.lock().unwrap() = Some(r);
                code
            })
        };
        let mut spec = JobSpec::db(&caller.user, 1, hooks, Payload::Task(task));
        spec.job_id = Some(job_id);
        if let Err(e) = self.inner.cluster.submit(spec) {
            self.inner.registry.transition(
                name,
                StatusValue::Checkpointing,
                StatusValue::Stopped,
                TransitionMeta::default(),
            )?;
            return Err(e.into());
        }
        rx.recv().map_err(|_| LifecycleError::Internal("checkpoint job vanished".into()))?;
        let r = result.lock().unwrap().take();
        r.unwrap_or_else(|| Err(LifecycleError::ArchiveFailed("checkpoint task did not run".into())))
    }

    pub fn list_checkpoints(&self, name: &str, caller: &Caller) -> Result<Vec<CheckpointMeta>> {
        let desc = self.descriptor(name)?;
        Self::require_member_or_admin(caller, &desc)?;
        Ok(archive::list_checkpoints(&desc.central_path)?)
    }

    pub fn db_restore(&self, name: &str, checkpoint: &str, caller: &Caller) -> Result<()> {
        Self::require_admin(caller, "checkpoint restore")?;
        let desc = self.descriptor(name)?;
        let lock = self.inner.op_lock(name);
        let _g = lock.lock().unwrap();
        let status = self.status(name)?;
        if status.value != StatusValue::Stopped {
            return Err(LifecycleError::WrongCurrentStatus {
                actual: status.value,
                expected: StatusValue::Stopped,
            });
        }
        archive::restore_checkpoint(&desc.central_path, desc.engine, checkpoint)
    }

    pub fn db_info(&self, name: &str, caller: &Caller) -> Result<DatabaseInfo> {
        let desc = self.descriptor(name)?;
        Self::require_member_or_admin(caller, &desc)?;
        let table = self.inner.table();
        let mut dns_names: Vec<String> = table
            .records_for_database(name)
            .into_iter()
            .map(|r| r.fqdn)
            .collect();
        dns_names.sort();
        let node_fqdns = (0..desc.num_nodes)
            .map(|i| table.fqdn(&format!("{name}-{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DatabaseInfo {
            type_label: desc.type_label(),
            status: self.status(name)?,
            history: self.inner.registry.history(name)?,
            checkpoints: archive::list_checkpoints(&desc.central_path)?,
            dns_names,
            endpoints: engines::endpoints(desc.engine, &table.fqdn(name)?, &node_fqdns),
            descriptor: desc,
        })
    }

    pub fn locate_access_key(&self, name: &str, caller: &Caller) -> Result<AccessKey> {
        let desc = self.descriptor(name)?;
        Ok(self.inner.keys.locate_access_key(name, &desc.security_group, caller)?)
    }

    /// Step one of revocation; restarting the database is step two.
    pub fn revoke_user(&self, name: &str, user: &str, caller: &Caller) -> Result<RevocationReport> {
        Self::require_admin(caller, "revocation")?;
        let desc = self.descriptor(name)?;
        let plan = security::revoke_user(
            &self.inner.identities,
            &self.inner.keys,
            name,
            &desc.security_group,
            user,
            caller,
        )?;
        let state = plan.state(self.inner.keys.generation(name)?);
        Ok(RevocationReport { plan, state })
    }

    pub fn revocation_state(&self, plan: &RevocationPlan) -> Result<RevocationState> {
        Ok(plan.state(self.inner.keys.generation(&plan.database)?))
    }

    /// Service ordering observed during the latest start of `name`.
    pub fn start_events(&self, name: &str) -> Vec<StartEvent> {
        if let Some(s) = self.inner.session(name) {
            return s.events();
        }
        self.inner.last_events.lock().unwrap().get(name).cloned().unwrap_or_default()
    }

    /// Anomalies noted by the engine supervisor of a live database.
    pub fn engine_session(&self, name: &str) -> Option<Arc<EngineSession>> {
        self.inner.session(name)
    }

    /// Admin recovery for a database stuck in a transient or orphaned state.
    pub fn db_force_stop(&self, name: &str, caller: &Caller) -> Result<DatabaseStatus> {
        Self::require_admin(caller, "forced stop")?;
        self.descriptor(name)?;
        plans::force_stop(&self.inner, name, caller)
    }
}

/// Timestamp for checkpoint ids: compact RFC 3339 with milliseconds.
pub(crate) fn compact_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%S%.3fZ").to_string()
}
