//! The toy daemon: a coordinator (front end, user table, request routing)
//! or a worker (one key partition).
//!
//! Workers keep their partition in memory, append every write to
//! `wal.jsonl`, and on shutdown compact into sixteen `tablet-XX.jsonl` files.
//! The coordinator authenticates users, then forwards each key to worker
//! `fnv1a(key) % n`, which it finds by DNS name.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{codes, fnv1a, partition_of, Reply, Request, MAX_LINE};
use crate::dyndns::client::DnsClient;
use crate::fsutil;
use crate::security::{read_secret_file, SUPERUSER_NAME};

const TABLETS: u64 = 16;
const WAL_FILE: &str = "wal.jsonl";
const USERS_FILE: &str = "users.json";
const JOIN_DEADLINE: Duration = Duration::from_secs(10);
const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Coordinator,
    Worker,
}

impl Role {
    pub fn port(self) -> u16 {
        match self {
            Role::Coordinator => 7100,
            Role::Worker => 7200,
        }
    }
}

/// Everything a daemon needs. Credentials are referenced by path only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaemonConfig {
    pub role: Role,
    pub service: String,
    pub database: String,
    pub node_index: u32,
    pub num_nodes: u32,
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub log_path: PathBuf,
    pub shared_secret_path: PathBuf,
    #[serde(default)]
    pub superuser_path: Option<PathBuf>,
    pub dns_server: SocketAddr,
    pub coordinator_fqdn: String,
    #[serde(default)]
    pub worker_fqdns: Vec<String>,
}

struct Logger(Mutex<Option<File>>);

impl Logger {
    fn open(path: &Path) -> Logger {
        if let Some(p) = path.parent() {
            let _ = fs::create_dir_all(p);
        }
        Logger(Mutex::new(
            OpenOptions::new().create(true).append(true).open(path).ok(),
        ))
    }

    fn log(&self, msg: &str) {
        if let Some(f) = self.0.lock().unwrap().as_mut() {
            let _ = writeln!(f, "{} {msg}", chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ"));
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Pair {
    k: String,
    v: String,
}

struct WorkerStore {
    dir: PathBuf,
    map: BTreeMap<String, String>,
    wal: File,
}

fn tablet_of(key: &str) -> u64 {
    (fnv1a(key.as_bytes()) >> 32) % TABLETS
}

fn read_pairs(path: &Path, map: &mut BTreeMap<String, String>) -> io::Result<()> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        // A torn final WAL line from a crash is skipped.
        if let Ok(p) = serde_json::from_str::<Pair>(&line) {
            map.insert(p.k, p.v);
        }
    }
    Ok(())
}

impl WorkerStore {
    fn open(dir: &Path) -> io::Result<WorkerStore> {
        fs::create_dir_all(dir)?;
        let mut map = BTreeMap::new();
        for t in 0..TABLETS {
            read_pairs(&dir.join(format!("tablet-{t:02}.jsonl")), &mut map)?;
        }
        read_pairs(&dir.join(WAL_FILE), &mut map)?;
        let wal = OpenOptions::new().create(true).append(true).open(dir.join(WAL_FILE))?;
        Ok(WorkerStore {
            dir: dir.to_path_buf(),
            map,
            wal,
        })
    }

    fn put(&mut self, k: String, v: String) -> io::Result<()> {
        let mut line = serde_json::to_string(&Pair { k: k.clone(), v: v.clone() })?;
        line.push('\n');
        self.wal.write_all(line.as_bytes())?;
        self.map.insert(k, v);
        Ok(())
    }

    /// Compact the map into tablet files and drop the WAL.
    fn flush(&mut self) -> io::Result<()> {
        let mut tablets: Vec<String> = vec![String::new(); TABLETS as usize];
        for (k, v) in &self.map {
            let t = &mut tablets[tablet_of(k) as usize];
            t.push_str(&serde_json::to_string(&Pair { k: k.clone(), v: v.clone() })?);
            t.push('\n');
        }
        for (i, body) in tablets.iter().enumerate() {
            fsutil::atomic_write(&self.dir.join(format!("tablet-{i:02}.jsonl")), body.as_bytes())?;
        }
        self.wal = File::create(self.dir.join(WAL_FILE))?;
        self.wal.sync_all()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PasswordHash {
    salt: String,
    hash: String,
}

fn hash_password(salt: &str, secret: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(secret.as_bytes());
    hex::encode(h.finalize())
}

struct PeerLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl PeerLink {
    fn call(&mut self, req: &Request) -> io::Result<Reply> {
        self.writer.write_all(req.to_line().as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        Ok(Reply::parse(&line))
    }
}

fn connect_by_name(dns: &DnsClient, fqdn: &str, port: u16) -> io::Result<TcpStream> {
    let ip = dns
        .resolve_a(fqdn)?
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{fqdn} does not resolve")))?;
    let s = TcpStream::connect_timeout(&SocketAddr::from((ip, port)), IO_TIMEOUT)?;
    s.set_read_timeout(Some(IO_TIMEOUT))?;
    s.set_write_timeout(Some(IO_TIMEOUT))?;
    s.set_nodelay(true)?;
    Ok(s)
}

enum State {
    Coordinator {
        superuser_path: PathBuf,
        users_path: PathBuf,
        users: Mutex<BTreeMap<String, PasswordHash>>,
        peers: Vec<Mutex<Option<PeerLink>>>,
        dns: DnsClient,
    },
    Worker {
        store: Mutex<WorkerStore>,
    },
}

struct Daemon {
    cfg: DaemonConfig,
    secret: String,
    state: State,
    log: Logger,
    conns: Mutex<Vec<TcpStream>>,
}

#[derive(Default)]
struct Session {
    user: Option<String>,
    peer: bool,
}

impl Daemon {
    fn handle(&self, session: &mut Session, req: Request) -> Reply {
        match (&self.state, req) {
            (_, Request::Ping) => Reply::Ok("PONG".into()),
            (State::Coordinator { .. }, Request::Join { index, secret }) => {
                if secret == self.secret {
                    self.log.log(&format!("worker {index} joined"));
                    Reply::ok()
                } else {
                    self.log.log(&format!("worker {index} presented a wrong shared secret"));
                    Reply::err(codes::AUTH_MISMATCH)
                }
            }
            (State::Coordinator { superuser_path, users, .. }, Request::Auth { user, secret }) => {
                let ok = if user == SUPERUSER_NAME {
                    read_secret_file(superuser_path).map(|v| v == secret).unwrap_or(false)
                } else {
                    users
                        .lock()
                        .unwrap()
                        .get(&user)
                        .map(|h| hash_password(&h.salt, &secret) == h.hash)
                        .unwrap_or(false)
                };
                if ok {
                    session.user = Some(user);
                    Reply::ok()
                } else {
                    self.log.log(&format!("authentication failed for `{user}`"));
                    session.user = None;
                    Reply::err(codes::AUTH_FAILED)
                }
            }
            (State::Coordinator { users_path, users, .. }, Request::SetPass { user, secret }) => {
                match &session.user {
                    None => return Reply::err(codes::NOT_AUTHENTICATED),
                    Some(u) if u != SUPERUSER_NAME => return Reply::err(codes::NOT_AUTHORIZED),
                    _ => {}
                }
                let salt = hex::encode(rand::rng().random::<[u8; 16]>());
                let hash = hash_password(&salt, &secret);
                let mut users = users.lock().unwrap();
                let mut next = users.clone();
                next.insert(user.clone(), PasswordHash { salt, hash });
                if fsutil::write_json(users_path, &next).is_err() {
                    return Reply::err(codes::UNAVAILABLE);
                }
                *users = next;
                self.log.log(&format!("password changed for `{user}`"));
                Reply::ok()
            }
            (State::Coordinator { .. }, req @ (Request::Put { .. } | Request::Get { .. })) => {
                if session.user.is_none() {
                    return Reply::err(codes::NOT_AUTHENTICATED);
                }
                let key = match &req {
                    Request::Put { key, .. } | Request::Get { key } => key,
                    _ => unreachable!(),
                };
                self.forward(partition_of(key, self.cfg.num_nodes), &req)
            }
            (State::Coordinator { .. }, Request::Stats) => {
                if session.user.is_none() {
                    return Reply::err(codes::NOT_AUTHENTICATED);
                }
                let mut counts = Vec::new();
                for i in 0..self.cfg.num_nodes {
                    match self.forward(i, &Request::Stats) {
                        Reply::Ok(c) => counts.push(c),
                        e => return e,
                    }
                }
                Reply::Ok(counts.join(" "))
            }
            (State::Worker { .. }, Request::Peer { secret }) => {
                if secret == self.secret {
                    session.peer = true;
                    Reply::ok()
                } else {
                    self.log.log("peer presented a wrong shared secret");
                    Reply::err(codes::AUTH_MISMATCH)
                }
            }
            (State::Worker { store }, req) if session.peer => match req {
                Request::Put { key, value } => match store.lock().unwrap().put(key, value) {
                    Ok(()) => Reply::ok(),
                    Err(_) => Reply::err(codes::UNAVAILABLE),
                },
                Request::Get { key } => match store.lock().unwrap().map.get(&key) {
                    Some(v) => Reply::Ok(v.clone()),
                    None => Reply::err(codes::KEY_NOT_FOUND),
                },
                Request::Stats => Reply::Ok(store.lock().unwrap().map.len().to_string()),
                _ => Reply::err(codes::NOT_AUTHORIZED),
            },
            (State::Worker { .. }, Request::Put { .. } | Request::Get { .. } | Request::Stats) => {
                Reply::err(codes::NOT_AUTHENTICATED)
            }
            _ => Reply::err(codes::NOT_AUTHORIZED),
        }
    }

    fn forward(&self, idx: u32, req: &Request) -> Reply {
        let State::Coordinator { peers, dns, .. } = &self.state else {
            unreachable!()
        };
        let mut slot = peers[idx as usize].lock().unwrap();
        for _ in 0..2 {
            if slot.is_none() {
                match self.open_peer(dns, idx) {
                    Ok(link) => *slot = Some(link),
                    Err(r) => return r,
                }
            }
            match slot.as_mut().unwrap().call(req) {
                Ok(r) => return r,
                Err(_) => *slot = None,
            }
        }
        Reply::err(codes::UNAVAILABLE)
    }

    fn open_peer(&self, dns: &DnsClient, idx: u32) -> Result<PeerLink, Reply> {
        let fqdn = &self.cfg.worker_fqdns[idx as usize];
        let s = connect_by_name(dns, fqdn, Role::Worker.port()).map_err(|e| {
            self.log.log(&format!("worker {fqdn} unreachable: {e}"));
            Reply::err(codes::UNAVAILABLE)
        })?;
        let mut link = PeerLink {
            reader: BufReader::new(s.try_clone().map_err(|_| Reply::err(codes::UNAVAILABLE))?),
            writer: s,
        };
        match link.call(&Request::Peer { secret: self.secret.clone() }) {
            Ok(Reply::Ok(_)) => Ok(link),
            Ok(e) => Err(e),
            Err(_) => Err(Reply::err(codes::UNAVAILABLE)),
        }
    }

    fn serve_conn(&self, stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let Ok(mut writer) = stream.try_clone() else { return };
        if let Ok(c) = stream.try_clone() {
            self.conns.lock().unwrap().push(c);
        }
        let mut reader = BufReader::new(stream);
        let mut session = Session::default();
        let mut line = String::new();
        loop {
            line.clear();
            match (&mut reader).take(MAX_LINE as u64 + 1).read_line(&mut line) {
                Ok(0) | Err(_) => return,
                Ok(_) => {}
            }
            if !line.ends_with('\n') {
                let _ = writer.write_all(Reply::err(codes::TOO_LARGE).to_line().as_bytes());
                return;
            }
            let reply = match Request::parse(&line) {
                Ok(req) => self.handle(&mut session, req),
                Err(code) => Reply::err(code),
            };
            if writer.write_all(reply.to_line().as_bytes()).is_err() {
                return;
            }
        }
    }
}

fn join_coordinator(cfg: &DaemonConfig, secret: &str) -> Result<(), String> {
    let dns = DnsClient::new(cfg.dns_server).with_timeout(Duration::from_millis(500));
    let deadline = Instant::now() + JOIN_DEADLINE;
    let mut last = String::from("coordinator unreachable");
    while Instant::now() < deadline {
        match connect_by_name(&dns, &cfg.coordinator_fqdn, Role::Coordinator.port()) {
            Ok(s) => {
                let mut link = PeerLink {
                    reader: BufReader::new(s.try_clone().map_err(|e| e.to_string())?),
                    writer: s,
                };
                let req = Request::Join {
                    index: cfg.node_index,
                    secret: secret.to_string(),
                };
                return match link.call(&req) {
                    Ok(Reply::Ok(_)) => Ok(()),
                    Ok(Reply::Err(c)) => Err(c),
                    Err(e) => Err(e.to_string()),
                };
            }
            Err(e) => last = e.to_string(),
        }
        thread::sleep(Duration::from_millis(50));
    }
    Err(last)
}

/// Run a daemon until `shutdown` fires or its sender is dropped. `ready`
/// receives the bound address, or the reason startup failed.
pub fn run(
    cfg: DaemonConfig,
    shutdown: Receiver<()>,
    ready: impl FnOnce(Result<SocketAddr, String>),
) -> Result<(), String> {
    let log = Logger::open(&cfg.log_path);
    let startup = || -> Result<(TcpListener, Daemon), String> {
        let secret = read_secret_file(&cfg.shared_secret_path)
            .map_err(|e| format!("shared secret unreadable: {e}"))?;
        let listener = TcpListener::bind(cfg.bind).map_err(|e| format!("bind {}: {e}", cfg.bind))?;
        let state = match cfg.role {
            Role::Coordinator => {
                fs::create_dir_all(&cfg.data_dir).map_err(|e| e.to_string())?;
                let users_path = cfg.data_dir.join(USERS_FILE);
                let users = if users_path.exists() {
                    fsutil::read_json(&users_path).map_err(|e| e.to_string())?
                } else {
                    BTreeMap::new()
                };
                State::Coordinator {
                    superuser_path: cfg
                        .superuser_path
                        .clone()
                        .ok_or("coordinator needs a superuser credential path")?,
                    users_path,
                    users: Mutex::new(users),
                    peers: (0..cfg.num_nodes).map(|_| Mutex::new(None)).collect(),
                    dns: DnsClient::new(cfg.dns_server),
                }
            }
            Role::Worker => {
                let store = WorkerStore::open(&cfg.data_dir).map_err(|e| e.to_string())?;
                join_coordinator(&cfg, &secret)?;
                State::Worker {
                    store: Mutex::new(store),
                }
            }
        };
        Ok((
            listener,
            Daemon {
                cfg: cfg.clone(),
                secret,
                state,
                log: Logger::open(&cfg.log_path),
                conns: Mutex::new(Vec::new()),
            },
        ))
    };
    let (listener, daemon) = match startup() {
        Ok(v) => v,
        Err(e) => {
            log.log(&format!("{} startup failed: {e}", cfg.service));
            ready(Err(e.clone()));
            return Err(e);
        }
    };
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    listener.set_nonblocking(true).map_err(|e| e.to_string())?;
    log.log(&format!("{} node {} listening on {addr}", cfg.service, cfg.node_index));
    ready(Ok(addr));

    let daemon = Arc::new(daemon);
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                let _ = s.set_nonblocking(false);
                let d = daemon.clone();
                thread::spawn(move || d.serve_conn(s));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                match shutdown.try_recv() {
                    Err(TryRecvError::Empty) => thread::sleep(Duration::from_millis(20)),
                    _ => break,
                }
            }
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
    drop(listener);
    for c in daemon.conns.lock().unwrap().drain(..) {
        let _ = c.shutdown(Shutdown::Both);
    }
    if let State::Worker { store } = &daemon.state {
        store.lock().unwrap().flush().map_err(|e| e.to_string())?;
    }
    log.log(&format!("{} node {} stopped", cfg.service, cfg.node_index));
    Ok(())
}

/// Read every pair persisted in a worker data directory (tablets plus WAL).
pub fn read_partition(dir: &Path) -> io::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for t in 0..TABLETS {
        read_pairs(&dir.join(format!("tablet-{t:02}.jsonl")), &mut map)?;
    }
    read_pairs(&dir.join(WAL_FILE), &mut map)?;
    Ok(map)
}
