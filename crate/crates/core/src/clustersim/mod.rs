//! Simulated cluster and "now"-only scheduler.
//!
//! Nodes are directories plus loopback addresses on one host. A job
//! allocates nodes immediately or fails; it then runs the prolog on every
//! node concurrently, sleeps in a placeholder payload until signalled, runs
//! the epilog on every node, and releases the nodes.
//!
//! Hooks are never interrupted. Cancellation is only looked at between
//! phases: a job cancelled during its prolog finishes the prolog and goes
//! straight to the epilog.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::security::Caller;

pub const DB_QUEUE: &str = "db";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: u32,
    pub cluster_root: PathBuf,
    #[serde(default = "default_ip_base")]
    pub ip_base: Ipv4Addr,
}

fn default_ip_base() -> Ipv4Addr {
    Ipv4Addr::new(127, 64, 0, 0)
}

impl ClusterConfig {
    pub fn new(nodes: u32, cluster_root: impl Into<PathBuf>) -> Self {
        ClusterConfig {
            nodes,
            cluster_root: cluster_root.into(),
            ip_base: default_ip_base(),
        }
    }

    pub fn with_ip_base(mut self, ip: Ipv4Addr) -> Self {
        self.ip_base = ip;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "job", rename_all = "lowercase")]
pub enum NodeState {
    Free,
    Allocated(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNode {
    pub node_id: u32,
    pub hostname: String,
    pub ip: Ipv4Addr,
    pub local_root: PathBuf,
    pub state: NodeState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "exit")]
pub enum Phase {
    PrologRunning,
    Sleeping,
    EpilogRunning,
    Done(i32),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::PrologRunning => f.write_str("PrologRunning"),
            Phase::Sleeping => f.write_str("Sleeping"),
            Phase::EpilogRunning => f.write_str("EpilogRunning"),
            Phase::Done(c) => write!(f, "Done({c})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("jobs must be submitted to the `db` queue, not `{0}`")]
    InvalidQueue(String),
    #[error("a job needs at least one node")]
    InvalidNodeCount,
    #[error("only immediate (\"now\") submission is supported")]
    QueuingUnsupported,
    #[error("insufficient resources: {free} nodes free, {requested} requested")]
    InsufficientResources { free: u32, requested: u32 },
    #[error("job `{0}` not found")]
    NotFound(String),
    #[error("job is in phase {0}")]
    WrongPhase(Phase),
    #[error("permission denied")]
    PermissionDenied,
    #[error("cluster i/o error: {0}")]
    Io(#[from] io::Error),
}

/// What a job's nodes know about the job.
#[derive(Debug, Clone)]
pub struct JobContext {
    pub job_id: String,
    pub owner: String,
    pub nodes: Vec<SimNode>,
}

impl JobContext {
    /// Position of `node` within the job (0 is the master).
    pub fn index_of(&self, node: &SimNode) -> u32 {
        self.nodes.iter().position(|n| n.node_id == node.node_id).unwrap_or(0) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTiming {
    pub phase: &'static str,
    pub node: String,
    pub step: String,
    pub seconds: f64,
}

/// Per-job step log: `<phase> <node> <step> <start|end|fail [reason]>` lines.
pub struct StepLog {
    path: PathBuf,
    phase: &'static str,
    node: String,
    file: Mutex<Option<fs::File>>,
    timings: Arc<Mutex<Vec<StepTiming>>>,
}

impl StepLog {
    fn line(&self, step: &str, what: &str) {
        let mut f = self.file.lock().unwrap();
        if f.is_none() {
            *f = OpenOptions::new().create(true).append(true).open(&self.path).ok();
        }
        if let Some(f) = f.as_mut() {
            let _ = f.write_all(format!("{} {} {step} {what}\n", self.phase, self.node).as_bytes());
        }
    }

    /// Run one step, bracketing it with start and end (or fail) lines.
    pub fn step<T, E: std::fmt::Display>(&self, step: &str, f: impl FnOnce() -> Result<T, E>) -> Result<T, E> {
        self.line(step, "start");
        let t0 = Instant::now();
        let r = f();
        self.timings.lock().unwrap().push(StepTiming {
            phase: self.phase,
            node: self.node.clone(),
            step: step.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        match &r {
            Ok(_) => self.line(step, "end"),
            Err(e) => self.line(step, &format!("fail {}", e.to_string().replace('\n', " "))),
        }
        r
    }
}

/// Scheduler callbacks. Hooks run on a thread per node; the `on_*`
/// notifications run on the job's driver thread.
pub trait Hooks: Send + Sync {
    fn prolog(&self, job: &JobContext, node: &SimNode, log: &StepLog) -> Result<(), String>;
    fn epilog(&self, job: &JobContext, node: &SimNode, log: &StepLog) -> Result<(), String>;
    /// All prologs finished. `proceed` is true if the job will enter Sleeping.
    fn on_prolog_done(&self, _job: &JobContext, _proceed: bool) {}
    fn on_epilog_begin(&self, _job: &JobContext) {}
    /// Nodes are already free when this runs.
    fn on_done(&self, _job: &JobContext, _exit: i32) {}
}

pub type Task = Box<dyn FnOnce(&JobContext) -> i32 + Send>;

pub enum Payload {
    /// Sleeps until signalled or cancelled.
    Placeholder,
    /// Runs once on the master node, then the job ends.
    Task(Task),
}

pub struct JobSpec {
    pub queue: String,
    pub num_nodes: u32,
    pub now: bool,
    pub owner: String,
    /// Pre-assigned id from [`Cluster::new_job_id`], if the caller needs it early.
    pub job_id: Option<String>,
    pub hooks: Arc<dyn Hooks>,
    pub payload: Payload,
}

impl JobSpec {
    pub fn db(owner: &str, num_nodes: u32, hooks: Arc<dyn Hooks>, payload: Payload) -> Self {
        JobSpec {
            queue: DB_QUEUE.to_string(),
            num_nodes,
            now: true,
            owner: owner.to_string(),
            job_id: None,
            hooks,
            payload,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JobHandle {
    pub job_id: String,
    pub nodes: Vec<SimNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JobRecord {
    job_id: String,
    owner: String,
    node_ids: Vec<u32>,
    #[serde(flatten)]
    phase: Phase,
}

#[derive(Debug, Clone)]
pub struct JobInfo {
    pub job_id: String,
    pub owner: String,
    pub phase: Phase,
    pub cancel_requested: bool,
    pub node_ids: Vec<u32>,
}

struct JobState {
    phase: Phase,
    cancel_requested: bool,
    wake: bool,
}

struct Job {
    ctx: JobContext,
    state: Mutex<JobState>,
    cv: Condvar,
    timings: Arc<Mutex<Vec<StepTiming>>>,
}

struct Inner {
    cfg: ClusterConfig,
    nodes: Mutex<Vec<NodeState>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    /// Non-Done jobs found on disk at open time, with their nodes.
    orphans: Mutex<HashMap<String, Vec<u32>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct Cluster {
    inner: Arc<Inner>,
}

impl Cluster {
    /// Open (or create) a cluster. Nodes held by jobs that never reached
    /// Done in a previous process stay allocated until force-released.
    pub fn open(cfg: ClusterConfig) -> Result<Cluster, ClusterError> {
        if cfg.nodes == 0 || cfg.nodes > 254 {
            return Err(ClusterError::InvalidNodeCount);
        }
        fs::create_dir_all(cfg.cluster_root.join("jobs"))?;
        for i in 1..=cfg.nodes {
            fs::create_dir_all(cfg.cluster_root.join("nodes").join(format!("node-{i}")))?;
        }
        let mut nodes = vec![NodeState::Free; cfg.nodes as usize];
        let mut orphans = HashMap::new();
        let mut max_id = 0u64;
        for entry in fs::read_dir(cfg.cluster_root.join("jobs"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Ok(rec) = fsutil::read_json::<JobRecord>(&path) else { continue };
            max_id = max_id.max(rec.job_id.parse().unwrap_or(0));
            if !matches!(rec.phase, Phase::Done(_)) {
                for id in &rec.node_ids {
                    if let Some(s) = nodes.get_mut(*id as usize - 1) {
                        *s = NodeState::Allocated(rec.job_id.clone());
                    }
                }
                orphans.insert(rec.job_id.clone(), rec.node_ids.clone());
            }
        }
        Ok(Cluster {
            inner: Arc::new(Inner {
                cfg,
                nodes: Mutex::new(nodes),
                jobs: Mutex::new(HashMap::new()),
                orphans: Mutex::new(orphans),
                next_id: AtomicU64::new(max_id + 1),
            }),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.inner.cfg
    }

    fn node_view(&self, id: u32, state: NodeState) -> SimNode {
        let cfg = &self.inner.cfg;
        SimNode {
            node_id: id,
            hostname: format!("node-{id}"),
            ip: Ipv4Addr::from(u32::from(cfg.ip_base) + id),
            local_root: cfg.cluster_root.join("nodes").join(format!("node-{id}")),
            state,
        }
    }

    pub fn nodes(&self) -> Vec<SimNode> {
        let states = self.inner.nodes.lock().unwrap().clone();
        states
            .into_iter()
            .enumerate()
            .map(|(i, s)| self.node_view(i as u32 + 1, s))
            .collect()
    }

    pub fn free_nodes(&self) -> u32 {
        self.inner
            .nodes
            .lock()
            .unwrap()
            .iter()
            .filter(|s| **s == NodeState::Free)
            .count() as u32
    }

    pub fn total_nodes(&self) -> u32 {
        self.inner.cfg.nodes
    }

    pub fn new_job_id(&self) -> String {
        self.inner.next_id.fetch_add(1, Ordering::SeqCst).to_string()
    }

    pub fn job_log_path(&self, job_id: &str) -> PathBuf {
        self.inner.cfg.cluster_root.join("jobs").join(format!("{job_id}.log"))
    }

    fn record_path(&self, job_id: &str) -> PathBuf {
        self.inner.cfg.cluster_root.join("jobs").join(format!("{job_id}.json"))
    }

    fn persist(&self, job: &Job, phase: Phase) {
        let rec = JobRecord {
            job_id: job.ctx.job_id.clone(),
            owner: job.ctx.owner.clone(),
            node_ids: job.ctx.nodes.iter().map(|n| n.node_id).collect(),
            phase,
        };
        if let Err(e) = fsutil::write_json(&self.record_path(&rec.job_id), &rec) {
            tracing::error!(job = %rec.job_id, "cannot persist job record: {e}");
        }
    }

    /// Allocate nodes and launch the job, or fail at once.
    pub fn submit(&self, spec: JobSpec) -> Result<JobHandle, ClusterError> {
        if spec.queue != DB_QUEUE {
            return Err(ClusterError::InvalidQueue(spec.queue));
        }
        if spec.num_nodes == 0 {
            return Err(ClusterError::InvalidNodeCount);
        }
        if !spec.now {
            return Err(ClusterError::QueuingUnsupported);
        }
        let job_id = spec.job_id.clone().unwrap_or_else(|| self.new_job_id());
        let nodes = {
            let mut states = self.inner.nodes.lock().unwrap();
            let free: Vec<usize> = states
                .iter()
                .enumerate()
                .filter(|(_, s)| **s == NodeState::Free)
                .map(|(i, _)| i)
                .collect();
            if (free.len() as u32) < spec.num_nodes {
                return Err(ClusterError::InsufficientResources {
                    free: free.len() as u32,
                    requested: spec.num_nodes,
                });
            }
            free[..spec.num_nodes as usize]
                .iter()
                .map(|&i| {
                    states[i] = NodeState::Allocated(job_id.clone());
                    self.node_view(i as u32 + 1, states[i].clone())
                })
                .collect::<Vec<_>>()
        };
        let job = Arc::new(Job {
            ctx: JobContext {
                job_id: job_id.clone(),
                owner: spec.owner.clone(),
                nodes: nodes.clone(),
            },
            state: Mutex::new(JobState {
                phase: Phase::PrologRunning,
                cancel_requested: false,
                wake: false,
            }),
            cv: Condvar::new(),
            timings: Arc::new(Mutex::new(Vec::new())),
        });
        self.persist(&job, Phase::PrologRunning);
        self.inner.jobs.lock().unwrap().insert(job_id.clone(), job.clone());
        let me = self.clone();
        let hooks = spec.hooks;
        let payload = spec.payload;
        thread::Builder::new()
            .name(format!("job-{job_id}"))
            .spawn(move || me.drive(job, hooks, payload))?;
        Ok(JobHandle { job_id, nodes })
    }

    fn step_log(&self, job: &Job, phase: &'static str, node: &SimNode) -> StepLog {
        StepLog {
            path: self.job_log_path(&job.ctx.job_id),
            phase,
            node: node.hostname.clone(),
            file: Mutex::new(None),
            timings: job.timings.clone(),
        }
    }

    fn run_hooks(&self, job: &Arc<Job>, hooks: &Arc<dyn Hooks>, phase: &'static str) -> bool {
        let results: Vec<bool> = thread::scope(|s| {
            let handles: Vec<_> = job
                .ctx
                .nodes
                .iter()
                .map(|node| {
                    let log = self.step_log(job, phase, node);
                    let ctx = &job.ctx;
                    s.spawn(move || {
                        let r = if phase == "prolog" {
                            hooks.prolog(ctx, node, &log)
                        } else {
                            hooks.epilog(ctx, node, &log)
                        };
                        if let Err(e) = &r {
                            tracing::warn!(job = %ctx.job_id, node = %node.hostname, "{phase} failed: {e}");
                        }
                        r.is_ok()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or(false)).collect()
        });
        results.into_iter().all(|ok| ok)
    }

    fn set_phase(&self, job: &Job, phase: Phase) {
        job.state.lock().unwrap().phase = phase;
        job.cv.notify_all();
        self.persist(job, phase);
    }

    fn drive(&self, job: Arc<Job>, hooks: Arc<dyn Hooks>, payload: Payload) {
        let prolog_ok = self.run_hooks(&job, &hooks, "prolog");
        let proceed = {
            let mut st = job.state.lock().unwrap();
            let proceed = prolog_ok && !st.cancel_requested;
            st.phase = if proceed { Phase::Sleeping } else { Phase::EpilogRunning };
            proceed
        };
        job.cv.notify_all();
        self.persist(&job, if proceed { Phase::Sleeping } else { Phase::EpilogRunning });
        hooks.on_prolog_done(&job.ctx, proceed);

        let mut exit = if prolog_ok { 0 } else { 1 };
        if proceed {
            match payload {
                Payload::Placeholder => {
                    let mut st = job.state.lock().unwrap();
                    while !st.wake {
                        st = job.cv.wait(st).unwrap();
                    }
                }
                Payload::Task(task) => exit = task(&job.ctx),
            }
            self.set_phase(&job, Phase::EpilogRunning);
        }
        hooks.on_epilog_begin(&job.ctx);
        if !self.run_hooks(&job, &hooks, "epilog") && exit == 0 {
            exit = 2;
        }
        self.release(&job.ctx.job_id);
        self.set_phase(&job, Phase::Done(exit));
        hooks.on_done(&job.ctx, exit);
    }

    fn release(&self, job_id: &str) {
        let mut states = self.inner.nodes.lock().unwrap();
        for s in states.iter_mut() {
            if *s == NodeState::Allocated(job_id.to_string()) {
                *s = NodeState::Free;
            }
        }
    }

    fn job(&self, job_id: &str) -> Result<Arc<Job>, ClusterError> {
        self.inner
            .jobs
            .lock()
            .unwrap()
            .get(job_id)
            .cloned()
            .ok_or_else(|| ClusterError::NotFound(job_id.to_string()))
    }

    /// Wake a sleeping placeholder so the epilog runs.
    pub fn signal_stop(&self, job_id: &str) -> Result<(), ClusterError> {
        let job = self.job(job_id)?;
        let mut st = job.state.lock().unwrap();
        if st.phase != Phase::Sleeping || st.wake {
            return Err(ClusterError::WrongPhase(st.phase));
        }
        st.wake = true;
        st.phase = Phase::EpilogRunning;
        job.cv.notify_all();
        Ok(())
    }

    /// Owner or admin only. Never interrupts a running hook.
    pub fn cancel(&self, job_id: &str, requester: &Caller) -> Result<(), ClusterError> {
        let job = self.job(job_id)?;
        if requester.user != job.ctx.owner && !requester.admin {
            return Err(ClusterError::PermissionDenied);
        }
        let mut st = job.state.lock().unwrap();
        st.cancel_requested = true;
        if st.phase == Phase::Sleeping && !st.wake {
            st.wake = true;
            st.phase = Phase::EpilogRunning;
        }
        job.cv.notify_all();
        Ok(())
    }

    pub fn job_info(&self, job_id: &str) -> Result<JobInfo, ClusterError> {
        let job = self.job(job_id)?;
        let st = job.state.lock().unwrap();
        Ok(JobInfo {
            job_id: job.ctx.job_id.clone(),
            owner: job.ctx.owner.clone(),
            phase: st.phase,
            cancel_requested: st.cancel_requested,
            node_ids: job.ctx.nodes.iter().map(|n| n.node_id).collect(),
        })
    }

    pub fn phase(&self, job_id: &str) -> Result<Phase, ClusterError> {
        Ok(self.job_info(job_id)?.phase)
    }

    /// Block until the job reaches `pred` or `timeout` passes; returns the last phase seen.
    pub fn wait_phase(&self, job_id: &str, timeout: Duration, pred: impl Fn(Phase) -> bool) -> Result<Phase, ClusterError> {
        let job = self.job(job_id)?;
        let deadline = Instant::now() + timeout;
        let mut st = job.state.lock().unwrap();
        while !pred(st.phase) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = job.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
        Ok(st.phase)
    }

    pub fn wait_done(&self, job_id: &str, timeout: Duration) -> Result<Phase, ClusterError> {
        self.wait_phase(job_id, timeout, |p| matches!(p, Phase::Done(_)))
    }

    pub fn step_timings(&self, job_id: &str) -> Result<Vec<StepTiming>, ClusterError> {
        Ok(self.job(job_id)?.timings.lock().unwrap().clone())
    }

    /// Jobs from a previous process that never reached Done.
    pub fn orphaned_jobs(&self) -> Vec<(String, Vec<SimNode>)> {
        let orphans = self.inner.orphans.lock().unwrap().clone();
        orphans
            .into_iter()
            .map(|(id, ids)| {
                let nodes = ids
                    .into_iter()
                    .map(|n| self.node_view(n, NodeState::Allocated(id.clone())))
                    .collect();
                (id, nodes)
            })
            .collect()
    }

    /// Admin recovery: free the nodes of a job that has no live driver.
    pub fn force_release(&self, job_id: &str) -> Result<(), ClusterError> {
        let known_live = self.inner.jobs.lock().unwrap().contains_key(job_id);
        let orphan = self.inner.orphans.lock().unwrap().remove(job_id);
        if orphan.is_none() && !known_live {
            return Err(ClusterError::NotFound(job_id.to_string()));
        }
        if let Ok(job) = self.job(job_id) {
            let st = job.state.lock().unwrap();
            if !matches!(st.phase, Phase::Done(_)) {
                return Err(ClusterError::WrongPhase(st.phase));
            }
            return Ok(());
        }
        self.release(job_id);
        let path = self.record_path(job_id);
        if let Ok(mut rec) = fsutil::read_json::<JobRecord>(&path) {
            rec.phase = Phase::Done(-9);
            fsutil::write_json(&path, &rec)?;
        }
        Ok(())
    }
}

/// Parse a job log into `(phase, node, step, marker)` tuples.
pub fn read_job_log(path: &Path) -> io::Result<Vec<(String, String, String, String)>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e),
    };
    Ok(text
        .lines()
        .filter_map(|l| {
            let mut it = l.split(' ');
            Some((
                it.next()?.to_string(),
                it.next()?.to_string(),
                it.next()?.to_string(),
                it.next()?.to_string(),
            ))
        })
        .collect())
}
