#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use dbm_core::config::{DaemonMode, ServiceConfig};
use dbm_core::dyndns::DnsClient;
use dbm_core::engines::EngineClient;
use dbm_core::security::{IdentityData, DB_USER};

pub const BIN: &str = env!("CARGO_BIN_EXE_dbm");
pub const GROUP: &str = "secgroup";
pub const ZONE: &str = "db.supercloud.test.";

/// Users spare for revocation cells; each can be revoked once.
pub const SPARE_USERS: usize = 40;

pub fn identities() -> IdentityData {
    let mut ids = IdentityData::default()
        .with_user("alice", &[GROUP], false)
        .with_user("bob", &[GROUP], false)
        .with_user("mallory", &["othergroup"], false)
        .with_user("admin", &[], true);
    for i in 0..SPARE_USERS {
        ids = ids.with_user(&format!("carol{i}"), &[GROUP], false);
    }
    ids
}

/// Write a process-daemon configuration under `root`.
pub fn write_config(root: &Path, nodes: u32, octet: u8) -> PathBuf {
    let mut cfg = ServiceConfig::under(root, nodes, Ipv4Addr::new(127, 64, octet, 0));
    cfg.daemons = DaemonMode::Process;
    cfg.daemon_program = Some(PathBuf::from(BIN));
    let path = root.join("config.json");
    cfg.save(&path).unwrap();
    if !cfg.identities.exists() {
        dbm_core::fsutil::write_json(&cfg.identities, &identities()).unwrap();
    }
    path
}

/// A running `dbm serve`.
pub struct Server {
    child: Child,
    pub url: String,
    pub dns: SocketAddr,
    pub config: PathBuf,
}

impl Server {
    pub fn spawn(config: &Path) -> Server {
        let log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(config.with_file_name("serve.log"))
            .unwrap();
        let mut child = Command::new(BIN)
            .args(["--config", config.to_str().unwrap(), "serve"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(log)
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let mut url = None;
        let mut dns = None;
        while url.is_none() || dns.is_none() {
            let Some(Ok(line)) = lines.next() else {
                panic!("serve exited early; see {}", config.with_file_name("serve.log").display());
            };
            if let Some(u) = line.strip_prefix("gateway ") {
                url = Some(u.to_string());
            } else if let Some(a) = line.strip_prefix("dns udp ") {
                dns = Some(a.parse().unwrap());
            }
        }
        std::thread::spawn(move || for _ in lines {});
        Server {
            child,
            url: url.unwrap(),
            dns: dns.unwrap(),
            config: config.to_path_buf(),
        }
    }

    /// SIGKILL, as a crash would.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn dbm(&self, user: &str, args: &[&str]) -> Run {
        dbm(&self.url, user, args)
    }

    /// Connect by name through the service's DNS and authenticate.
    pub fn engine(&self, name: &str, key: &str) -> EngineClient {
        let fqdn = format!("{name}.{ZONE}");
        let mut last = None;
        for _ in 0..50 {
            match EngineClient::connect_name(&DnsClient::new(self.dns), &fqdn) {
                Ok(mut c) => {
                    c.authenticate(DB_USER, key).unwrap();
                    return c;
                }
                Err(e) => last = Some(e),
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        panic!("cannot reach {fqdn}: {last:?}");
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(self) -> String {
        assert_eq!(self.code, 0, "dbm failed: {}", self.stderr);
        self.stdout
    }
}

pub fn dbm(url: &str, user: &str, args: &[&str]) -> Run {
    let out = Command::new(BIN)
        .args(["--url", url, "--as-user", user])
        .args(args)
        .env_remove("DBM_CONFIG")
        .env_remove("DBM_URL")
        .env_remove("DBM_USER")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}
