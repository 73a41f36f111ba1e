//! Per-job service supervision.
//!
//! An [`EngineSession`] is shared by the prologs and epilogs of every node in
//! one job. Service instances are `(service, node)` pairs; an instance of `D`
//! on node `j` depends on `S@0` when `S` is master-only and on `S@j`
//! otherwise. Starting waits for dependencies to be up, stopping waits for
//! dependents to be down, so each node can run its own plan concurrently.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::daemon::{self, DaemonConfig, Role};
use super::{EngineClient, EngineError, EngineKind, NodeScope, ServiceKind, ServiceSpec};
use crate::fsutil;
use crate::security::{generate_secret, SecretPaths};

const START_WAIT: Duration = Duration::from_secs(60);
const STOP_WAIT: Duration = Duration::from_secs(30);
const READY_WAIT: Duration = Duration::from_secs(30);
const STOP_GRACE: Duration = Duration::from_secs(10);

/// How daemon services are run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launcher {
    /// A thread per daemon inside this process.
    InProcess,
    /// `<program> daemon --spec <file>` child processes.
    Process { program: PathBuf },
}

/// Injected faults, keyed by database and node index.
#[derive(Debug, Default)]
pub struct FaultSet {
    corrupt_secret: Mutex<HashSet<(String, u32)>>,
}

impl FaultSet {
    /// Give the daemons on `node` a wrong shared secret on the next start.
    pub fn corrupt_secret(&self, db: &str, node: u32) {
        self.corrupt_secret.lock().unwrap().insert((db.to_string(), node));
    }

    pub fn clear(&self, db: &str) {
        self.corrupt_secret.lock().unwrap().retain(|(d, _)| d != db);
    }

    fn is_corrupt(&self, db: &str, node: u32) -> bool {
        self.corrupt_secret.lock().unwrap().contains(&(db.to_string(), node))
    }
}

#[derive(Debug, Clone)]
pub struct NodeContext {
    pub index: u32,
    pub ip: Ipv4Addr,
    /// `<local_root>/<db>` on this node.
    pub local_dir: PathBuf,
}

/// A service instance reaching "up", in the order observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartEvent {
    pub service: String,
    pub node: u32,
    pub at: Instant,
}

enum Proc {
    Child {
        child: Child,
        stdin: Option<ChildStdin>,
    },
    Thread {
        stop: Option<mpsc::Sender<()>>,
        handle: Option<JoinHandle<Result<(), String>>>,
    },
}

struct RunningDaemon {
    addr: SocketAddr,
    proc: Proc,
}

enum StopOutcome {
    Clean,
    AlreadyDead,
    Killed,
}

impl RunningDaemon {
    fn pid(&self) -> Option<u32> {
        match &self.proc {
            Proc::Child { child, .. } => Some(child.id()),
            Proc::Thread { .. } => None,
        }
    }

    fn stop(&mut self) -> StopOutcome {
        let deadline = Instant::now() + STOP_GRACE;
        match &mut self.proc {
            Proc::Child { child, stdin } => {
                if matches!(child.try_wait(), Ok(Some(_))) {
                    return StopOutcome::AlreadyDead;
                }
                drop(stdin.take());
                while Instant::now() < deadline {
                    if matches!(child.try_wait(), Ok(Some(_))) {
                        return StopOutcome::Clean;
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
                StopOutcome::Killed
            }
            Proc::Thread { stop, handle } => {
                let Some(h) = handle.take() else {
                    return StopOutcome::Clean;
                };
                if h.is_finished() {
                    let _ = h.join();
                    return StopOutcome::AlreadyDead;
                }
                drop(stop.take());
                while Instant::now() < deadline {
                    if h.is_finished() {
                        let _ = h.join();
                        return StopOutcome::Clean;
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                StopOutcome::Killed
            }
        }
    }

    /// Simulate a crash: the daemon disappears without flushing.
    fn kill(&mut self) {
        match &mut self.proc {
            Proc::Child { child, .. } => {
                let _ = child.kill();
                let _ = child.wait();
            }
            Proc::Thread { stop, handle } => {
                drop(stop.take());
                if let Some(h) = handle.take() {
                    let _ = h.join();
                }
            }
        }
    }
}

#[derive(Default)]
struct Board {
    up: HashSet<(&'static str, u32)>,
    down: HashSet<(&'static str, u32)>,
    poisoned: Option<String>,
    events: Vec<StartEvent>,
}

/// Shared state for the service plans of one job.
pub struct EngineSession {
    kind: EngineKind,
    db: String,
    num_nodes: u32,
    services: Vec<ServiceSpec>,
    secrets: SecretPaths,
    dns_server: SocketAddr,
    db_fqdn: String,
    node_fqdns: Vec<String>,
    launcher: Launcher,
    faults: Arc<FaultSet>,
    board: Mutex<Board>,
    cv: Condvar,
    daemons: Mutex<BTreeMap<(u32, &'static str), RunningDaemon>>,
    anomalies: Mutex<Vec<String>>,
}

impl EngineSession {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: EngineKind,
        db: &str,
        num_nodes: u32,
        central: &Path,
        dns_server: SocketAddr,
        db_fqdn: String,
        node_fqdns: Vec<String>,
        launcher: Launcher,
        faults: Arc<FaultSet>,
    ) -> EngineSession {
        EngineSession {
            kind,
            db: db.to_string(),
            num_nodes,
            services: kind.services(),
            secrets: SecretPaths::for_central(central),
            dns_server,
            db_fqdn,
            node_fqdns,
            launcher,
            faults,
            board: Mutex::new(Board::default()),
            cv: Condvar::new(),
            daemons: Mutex::new(BTreeMap::new()),
            anomalies: Mutex::new(Vec::new()),
        }
    }

    pub fn kind(&self) -> EngineKind {
        self.kind
    }

    fn spec(&self, name: &str) -> &ServiceSpec {
        self.services.iter().find(|s| s.name == name).expect("known service")
    }

    fn deps_of(&self, svc: &ServiceSpec, node: u32) -> Vec<(&'static str, u32)> {
        svc.depends_on
            .iter()
            .map(|d| {
                let s = self.spec(d);
                let at = match s.node_scope {
                    NodeScope::MasterOnly => 0,
                    NodeScope::AllNodes => node,
                };
                (s.name, at)
            })
            .collect()
    }

    fn dependents_of(&self, svc: &ServiceSpec, node: u32) -> Vec<(&'static str, u32)> {
        let mut v = Vec::new();
        for d in &self.services {
            if !d.depends_on.contains(&svc.name) {
                continue;
            }
            for j in 0..self.num_nodes {
                if d.node_scope.runs_on(j) && self.deps_of(d, j).contains(&(svc.name, node)) {
                    v.push((d.name, j));
                }
            }
        }
        v
    }

    /// Start every service this node runs, honouring cross-node dependencies.
    pub fn start_node(&self, ctx: &NodeContext) -> Result<(), EngineError> {
        for svc in self.services.iter().filter(|s| s.node_scope.runs_on(ctx.index)) {
            self.wait_for_deps(svc, ctx.index)?;
            if let Err(e) = self.start_one(svc, ctx) {
                let mut b = self.board.lock().unwrap();
                b.poisoned.get_or_insert_with(|| svc.name.to_string());
                self.cv.notify_all();
                return Err(e);
            }
            let mut b = self.board.lock().unwrap();
            b.up.insert((svc.name, ctx.index));
            b.events.push(StartEvent {
                service: svc.name.to_string(),
                node: ctx.index,
                at: Instant::now(),
            });
            self.cv.notify_all();
        }
        Ok(())
    }

    fn wait_for_deps(&self, svc: &ServiceSpec, node: u32) -> Result<(), EngineError> {
        let deps = self.deps_of(svc, node);
        let deadline = Instant::now() + START_WAIT;
        let mut b = self.board.lock().unwrap();
        loop {
            if let Some(p) = &b.poisoned {
                return Err(EngineError::DependencyStartFailed(p.clone()));
            }
            match deps.iter().find(|d| !b.up.contains(d)) {
                None => return Ok(()),
                Some(missing) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(EngineError::DependencyStartFailed(missing.0.to_string()));
                    }
                    b = self.cv.wait_timeout(b, deadline - now).unwrap().0;
                }
            }
        }
    }

    fn start_one(&self, svc: &ServiceSpec, ctx: &NodeContext) -> Result<(), EngineError> {
        match svc.kind {
            ServiceKind::NoOp => Ok(()),
            ServiceKind::Check => match self.kind.check_path(svc.name, ctx.index) {
                Some(p) if !ctx.local_dir.join(&p).exists() => {
                    Err(EngineError::DependencyStartFailed(svc.name.to_string()))
                }
                _ => Ok(()),
            },
            ServiceKind::Daemon(role) => {
                let cfg = self.daemon_config(svc, role, ctx)?;
                let d = self.launch(&cfg, ctx)?;
                self.daemons.lock().unwrap().insert((ctx.index, svc.name), d);
                Ok(())
            }
        }
    }

    fn daemon_config(&self, svc: &ServiceSpec, role: Role, ctx: &NodeContext) -> Result<DaemonConfig, EngineError> {
        let conf_dir = ctx.local_dir.join("conf");
        fs::create_dir_all(&conf_dir)?;
        fsutil::set_mode(&conf_dir, 0o700)?;
        let mut shared = self.secrets.shared_secret.clone();
        if self.faults.is_corrupt(&self.db, ctx.index) {
            shared = conf_dir.join("shared_secret.injected");
            fsutil::atomic_write_mode(&shared, format!("{}\n", generate_secret()).as_bytes(), Some(0o600))?;
        }
        let data_dir = match role {
            Role::Coordinator => ctx.local_dir.join(self.kind.coordinator_data()),
            Role::Worker => ctx.local_dir.join(self.kind.partition_dir(ctx.index)),
        };
        Ok(DaemonConfig {
            role,
            service: svc.name.to_string(),
            database: self.db.clone(),
            node_index: ctx.index,
            num_nodes: self.num_nodes,
            bind: SocketAddr::from((ctx.ip, role.port())),
            data_dir,
            log_path: ctx.local_dir.join("logs").join(format!("{}-{}.log", svc.name, ctx.index)),
            shared_secret_path: shared,
            superuser_path: (role == Role::Coordinator).then(|| self.secrets.superuser.clone()),
            dns_server: self.dns_server,
            coordinator_fqdn: self.db_fqdn.clone(),
            worker_fqdns: self.node_fqdns.clone(),
        })
    }

    fn launch(&self, cfg: &DaemonConfig, ctx: &NodeContext) -> Result<RunningDaemon, EngineError> {
        let fail = |reason: String| {
            tracing::warn!(db = %self.db, service = %cfg.service, node = ctx.index, "daemon failed: {reason}");
            if reason.contains(super::protocol::codes::AUTH_MISMATCH) {
                EngineError::AuthMismatch
            } else {
                EngineError::DependencyStartFailed(cfg.service.clone())
            }
        };
        match &self.launcher {
            Launcher::InProcess => {
                let (stop_tx, stop_rx) = mpsc::channel();
                let (ready_tx, ready_rx) = mpsc::channel();
                let c = cfg.clone();
                let handle = thread::Builder::new()
                    .name(format!("{}-{}", cfg.service, cfg.node_index))
                    .spawn(move || {
                        daemon::run(c, stop_rx, move |r| {
                            let _ = ready_tx.send(r);
                        })
                    })?;
                match ready_rx.recv_timeout(READY_WAIT) {
                    Ok(Ok(addr)) => Ok(RunningDaemon {
                        addr,
                        proc: Proc::Thread {
                            stop: Some(stop_tx),
                            handle: Some(handle),
                        },
                    }),
                    Ok(Err(reason)) => {
                        let _ = handle.join();
                        Err(fail(reason))
                    }
                    Err(_) => Err(fail("no readiness report".into())),
                }
            }
            Launcher::Process { program } => {
                let conf = ctx.local_dir.join("conf").join(format!("{}.json", cfg.service));
                fsutil::write_json(&conf, cfg)?;
                fs::create_dir_all(cfg.log_path.parent().unwrap())?;
                let log = OpenOptions::new().create(true).append(true).open(&cfg.log_path)?;
                let mut child = Command::new(program)
                    .arg("daemon")
                    .arg("--spec")
                    .arg(&conf)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::from(log))
                    .spawn()?;
                let stdout = child.stdout.take().expect("piped stdout");
                let (tx, rx) = mpsc::channel();
                thread::spawn(move || {
                    let mut line = String::new();
                    let _ = BufReader::new(stdout).read_line(&mut line);
                    let _ = tx.send(line);
                });
                let line = rx.recv_timeout(READY_WAIT).unwrap_or_default();
                let line = line.trim();
                if let Some(addr) = line.strip_prefix("READY ").and_then(|a| a.parse().ok()) {
                    let stdin = child.stdin.take();
                    Ok(RunningDaemon {
                        addr,
                        proc: Proc::Child { child, stdin },
                    })
                } else {
                    let _ = child.kill();
                    let _ = child.wait();
                    let reason = match line.strip_prefix("FAIL ") {
                        Some(r) => r.to_string(),
                        None => format!("no readiness report; see {}", cfg.log_path.display()),
                    };
                    Err(fail(reason))
                }
            }
        }
    }

    /// Health check: every daemon on this node answers `PING`.
    pub fn ping_node(&self, node: u32) -> Result<(), EngineError> {
        let addrs: Vec<SocketAddr> = self
            .daemons
            .lock()
            .unwrap()
            .iter()
            .filter(|((n, _), _)| *n == node)
            .map(|(_, d)| d.addr)
            .collect();
        for a in addrs {
            EngineClient::connect(a)?.ping()?;
        }
        Ok(())
    }

    /// Stop this node's services in reverse order. Services that never
    /// started are marked down without action, so a second call is a no-op.
    pub fn stop_node(&self, node: u32) -> Result<(), EngineError> {
        let mut timed_out = Vec::new();
        for svc in self.services.iter().rev().filter(|s| s.node_scope.runs_on(node)) {
            if self.board.lock().unwrap().down.contains(&(svc.name, node)) {
                continue;
            }
            let dependents = self.dependents_of(svc, node);
            let deadline = Instant::now() + STOP_WAIT;
            let mut b = self.board.lock().unwrap();
            while dependents.iter().any(|d| !b.down.contains(d)) {
                let now = Instant::now();
                if now >= deadline {
                    self.note(format!("{}@{node} stopped before its dependents", svc.name));
                    break;
                }
                b = self.cv.wait_timeout(b, deadline - now).unwrap().0;
            }
            drop(b);
            let daemon = self.daemons.lock().unwrap().remove(&(node, svc.name));
            if let Some(mut d) = daemon {
                match d.stop() {
                    StopOutcome::Clean => {}
                    StopOutcome::AlreadyDead => self.note(format!("{}@{node} had already exited", svc.name)),
                    StopOutcome::Killed => {
                        self.note(format!("{}@{node} force-killed after grace period", svc.name));
                        timed_out.push(format!("{}@{node}", svc.name));
                    }
                }
            }
            self.board.lock().unwrap().down.insert((svc.name, node));
            self.cv.notify_all();
        }
        if timed_out.is_empty() {
            Ok(())
        } else {
            Err(EngineError::StopTimeout(timed_out))
        }
    }

    fn note(&self, msg: String) {
        tracing::warn!(db = %self.db, "{msg}");
        self.anomalies.lock().unwrap().push(msg);
    }

    pub fn anomalies(&self) -> Vec<String> {
        self.anomalies.lock().unwrap().clone()
    }

    pub fn events(&self) -> Vec<StartEvent> {
        self.board.lock().unwrap().events.clone()
    }

    /// The front-end daemon address, once the master has started it.
    pub fn front_addr(&self) -> Option<SocketAddr> {
        self.daemons
            .lock()
            .unwrap()
            .iter()
            .find(|((n, _), d)| *n == 0 && d.addr.port() == Role::Coordinator.port())
            .map(|(_, d)| d.addr)
    }

    pub fn pids(&self) -> Vec<u32> {
        self.daemons.lock().unwrap().values().filter_map(|d| d.pid()).collect()
    }

    /// Crash one daemon without a clean shutdown (fault injection).
    pub fn kill_service(&self, node: u32, service: &str) -> bool {
        let mut ds = self.daemons.lock().unwrap();
        match ds.iter_mut().find(|((n, s), _)| *n == node && *s == service) {
            Some((_, d)) => {
                d.kill();
                true
            }
            None => false,
        }
    }
}

impl Drop for EngineSession {
    fn drop(&mut self) {
        for d in self.daemons.get_mut().unwrap().values_mut() {
            d.kill();
        }
    }
}

/// SIGKILL a daemon left over from a crashed orchestrator.
pub fn kill_pid(pid: u32) -> bool {
    // SAFETY: kill(2) with a plain pid and signal has no memory-safety preconditions.
    unsafe { libc::kill(pid as libc::pid_t, libc::SIGKILL) == 0 }
}
