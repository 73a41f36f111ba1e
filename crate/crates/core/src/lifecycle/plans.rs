//! Start and stop plans, run as the prolog and epilog of a database job.

use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Inner, LifecycleError, Result};
use crate::clustersim::{ClusterError, Hooks, JobContext, Phase, SimNode, StepLog};
use crate::engines::{runtime::kill_pid, EngineKind, EnginePasswordSetter, EngineSession, NodeContext};
use crate::fsutil;
use crate::migrate::{copy_tree, CopyMode};
use crate::registry::{DatabaseDescriptor, DatabaseStatus, StatusValue, TransitionMeta};
use crate::security::{self, Caller};

pub const START_STEPS: [&str; 5] = [
    "register_dns",
    "copy_central_to_local",
    "start_services",
    "rotate_access_key",
    "mark_started",
];
pub const STOP_STEPS: [&str; 4] = [
    "stop_services",
    "copy_local_to_central",
    "deregister_dns",
    "mark_stopped",
];

/// Marks a node-local copy as complete, so the epilog knows to copy it back.
const STAGED: &str = ".staged";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreadcrumbNode {
    pub node_id: u32,
    pub ip: Ipv4Addr,
    pub local_root: PathBuf,
}

/// Durable record of a running job, enough to clean up after a crash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunBreadcrumb {
    pub database: String,
    pub job_id: String,
    pub nodes: Vec<BreadcrumbNode>,
    /// The prolog finished and the payload began.
    pub sleeping: bool,
    pub pids: Vec<u32>,
}

pub(super) fn write_breadcrumb(
    inner: &Inner,
    name: &str,
    job_id: &str,
    nodes: &[SimNode],
    sleeping: bool,
    pids: &[u32],
) -> std::io::Result<()> {
    let b = RunBreadcrumb {
        database: name.to_string(),
        job_id: job_id.to_string(),
        nodes: nodes
            .iter()
            .map(|n| BreadcrumbNode {
                node_id: n.node_id,
                ip: n.ip,
                local_root: n.local_root.clone(),
            })
            .collect(),
        sleeping,
        pids: pids.to_vec(),
    };
    fsutil::write_json(&inner.run_path(name), &b)
}

fn dns_names(name: &str, idx: u32) -> Vec<String> {
    let mut v = vec![format!("{name}-{idx}")];
    if idx == 0 {
        v.push(name.to_string());
    }
    v
}

fn copy_in(kind: EngineKind, idx: u32, central: &Path, local: &Path, mode: CopyMode) -> Result<(), String> {
    fs::create_dir_all(local).map_err(|e| e.to_string())?;
    fsutil::set_mode(local, 0o700).map_err(|e| e.to_string())?;
    let _ = fs::remove_file(local.join(STAGED));
    for sub in kind.node_subtrees(idx) {
        copy_tree(&central.join(&sub), &local.join(&sub), mode).map_err(|e| e.to_string())?;
    }
    fs::write(local.join(STAGED), b"").map_err(|e| e.to_string())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Copy each node subtree into `<sub>.incoming`, then swap it into place.
fn copy_back(kind: EngineKind, idx: u32, local: &Path, central: &Path, mode: CopyMode) -> Result<(), String> {
    for sub in kind.node_subtrees(idx) {
        let src = local.join(&sub);
        let dst = central.join(&sub);
        let incoming = with_suffix(&dst, ".incoming");
        let old = with_suffix(&dst, ".old");
        fsutil::remove_tree(&incoming).map_err(|e| e.to_string())?;
        copy_tree(&src, &incoming, mode).map_err(|e| e.to_string())?;
        fsutil::remove_tree(&old).map_err(|e| e.to_string())?;
        if dst.exists() {
            fs::rename(&dst, &old).map_err(|e| e.to_string())?;
        }
        fs::rename(&incoming, &dst).map_err(|e| e.to_string())?;
        fsutil::remove_tree(&old).map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub(super) struct DbHooks {
    inner: Arc<Inner>,
    desc: DatabaseDescriptor,
    session: Arc<EngineSession>,
}

impl DbHooks {
    pub(super) fn new(inner: Arc<Inner>, desc: DatabaseDescriptor, session: Arc<EngineSession>) -> Self {
        DbHooks { inner, desc, session }
    }
}

impl Hooks for DbHooks {
    fn prolog(&self, job: &JobContext, node: &SimNode, log: &StepLog) -> Result<(), String> {
        let idx = job.index_of(node);
        let name = &self.desc.name;
        let local = Inner::local_dir(&node.local_root, name);
        let table = self.inner.table();

        log.step("register_dns", || {
            for n in dns_names(name, idx) {
                table.upsert_record(&n, node.ip, None).map_err(|e| e.to_string())?;
            }
            Ok::<_, String>(())
        })?;
        log.step("copy_central_to_local", || {
            copy_in(self.desc.engine, idx, &self.desc.central_path, &local, self.inner.copy_mode)
        })?;
        log.step("start_services", || {
            self.session
                .start_node(&NodeContext {
                    index: idx,
                    ip: node.ip,
                    local_dir: local.clone(),
                })
                .map_err(|e| e.to_string())
        })?;
        if idx == 0 {
            log.step("rotate_access_key", || {
                let su = security::load_superuser(name, &self.desc.central_path).map_err(|e| e.to_string())?;
                let addr = self.session.front_addr().ok_or("front end not running")?;
                self.inner
                    .keys
                    .rotate_access_key(name, &self.desc.security_group, &su, &EnginePasswordSetter { addr })
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            })?;
        }
        log.step("mark_started", || self.session.ping_node(idx).map_err(|e| e.to_string()))
    }

    fn epilog(&self, job: &JobContext, node: &SimNode, log: &StepLog) -> Result<(), String> {
        let idx = job.index_of(node);
        let name = &self.desc.name;
        let local = Inner::local_dir(&node.local_root, name);
        let table = self.inner.table();
        let mut first_err: Option<String> = None;
        let mut keep = |r: Result<(), String>| {
            if let Err(e) = &r {
                first_err.get_or_insert_with(|| e.clone());
            }
            r
        };

        keep(log.step("stop_services", || self.session.stop_node(idx).map_err(|e| e.to_string()))).ok();
        let staged = local.join(STAGED).exists();
        let copied = keep(log.step("copy_local_to_central", || {
            if staged {
                copy_back(self.desc.engine, idx, &local, &self.desc.central_path, self.inner.copy_mode)
            } else {
                Ok(())
            }
        }));
        keep(log.step("deregister_dns", || {
            for n in dns_names(name, idx) {
                table.delete_record(&n).map_err(|e| e.to_string())?;
            }
            Ok(())
        }))
        .ok();
        // A failed copy-back leaves the local copy in place for recovery.
        keep(log.step("mark_stopped", || {
            if copied.is_ok() {
                fsutil::remove_tree(&local).map_err(|e| e.to_string())
            } else {
                Ok(())
            }
        }))
        .ok();
        match first_err {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }

    fn on_prolog_done(&self, job: &JobContext, proceed: bool) {
        if !proceed {
            return;
        }
        let name = &self.desc.name;
        if let Err(e) = write_breadcrumb(&self.inner, name, &job.job_id, &job.nodes, true, &self.session.pids()) {
            tracing::error!(db = %name, "cannot update run breadcrumb: {e}");
        }
        let _ = self.inner.registry.transition(
            name,
            StatusValue::Starting,
            StatusValue::Started,
            TransitionMeta::default(),
        );
    }

    fn on_epilog_begin(&self, _job: &JobContext) {
        let name = &self.desc.name;
        if let Ok(s) = self.inner.registry.get_status(name) {
            if matches!(s.value, StatusValue::Started | StatusValue::Starting) {
                let _ = self.inner.registry.transition(name, s.value, StatusValue::Stopping, TransitionMeta::default());
            }
        }
    }

    fn on_done(&self, _job: &JobContext, exit: i32) {
        let name = &self.desc.name;
        if exit != 0 {
            tracing::warn!(db = %name, exit, "database job ended with errors");
        }
        self.inner.finish_session(name);
        let _ = self.inner.registry.transition(
            name,
            StatusValue::Stopping,
            StatusValue::Stopped,
            TransitionMeta::default(),
        );
    }
}

pub(super) struct CheckpointHooks {
    inner: Arc<Inner>,
    name: String,
    done: mpsc::Sender<()>,
}

impl CheckpointHooks {
    pub(super) fn new(inner: Arc<Inner>, name: String, done: mpsc::Sender<()>) -> Self {
        CheckpointHooks { inner, name, done }
    }
}

impl Hooks for CheckpointHooks {
    fn prolog(&self, _job: &JobContext, _node: &SimNode, log: &StepLog) -> Result<(), String> {
        log.step("reserve_node", || Ok(()))
    }

    fn epilog(&self, _job: &JobContext, _node: &SimNode, log: &StepLog) -> Result<(), String> {
        log.step("release_node", || Ok(()))
    }

    fn on_done(&self, _job: &JobContext, _exit: i32) {
        let _ = self.inner.registry.transition(
            &self.name,
            StatusValue::Checkpointing,
            StatusValue::Stopped,
            TransitionMeta::default(),
        );
        let _ = self.done.send(());
    }
}

/// Drive a stuck database back to Stopped. A job still owned by this
/// process is cancelled normally; an orphan is cleaned up from its breadcrumb.
pub(super) fn force_stop(inner: &Arc<Inner>, name: &str, admin: &Caller) -> Result<DatabaseStatus> {
    let status = inner.registry.get_status(name)?;
    if status.value == StatusValue::Stopped {
        return Err(LifecycleError::WrongCurrentStatus {
            actual: status.value,
            expected: StatusValue::Stopping,
        });
    }
    if let Some(job) = &status.job_id {
        match inner.cluster.job_info(job) {
            Ok(info) if !matches!(info.phase, Phase::Done(_)) => {
                inner.cluster.cancel(job, admin)?;
                inner.cluster.wait_done(job, Duration::from_secs(120))?;
                for _ in 0..500 {
                    if inner.registry.get_status(name)?.value == StatusValue::Stopped {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
            Ok(_) | Err(ClusterError::NotFound(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let crumb: Option<RunBreadcrumb> = fsutil::read_json(&inner.run_path(name)).ok();
    let desc = inner.registry.descriptor(name)?;
    if let Some(b) = &crumb {
        for pid in &b.pids {
            kill_pid(*pid);
        }
        for (idx, n) in b.nodes.iter().enumerate() {
            let local = Inner::local_dir(&n.local_root, name);
            if b.sleeping && local.join(STAGED).exists() {
                if let Err(e) = copy_back(desc.engine, idx as u32, &local, &desc.central_path, inner.copy_mode) {
                    tracing::error!(db = %name, node = n.node_id, "copy-back during recovery failed: {e}");
                    continue;
                }
            }
            fsutil::remove_tree(&local)?;
        }
        let _ = inner.cluster.force_release(&b.job_id);
    }
    if let Some(job) = &status.job_id {
        let _ = inner.cluster.force_release(job);
    }
    let table = inner.table();
    for r in table.records_for_database(name) {
        table.delete_record(&r.fqdn)?;
    }
    inner.finish_session(name);
    if inner.registry.get_status(name)?.value != StatusValue::Stopped {
        inner.registry.force_stopped(name)?;
    }
    Ok(inner.registry.get_status(name)?)
}
