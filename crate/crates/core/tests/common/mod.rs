#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::time::Duration;

use dbm_core::config::ServiceConfig;
use dbm_core::dyndns::DnsClient;
use dbm_core::engines::EngineClient;
use dbm_core::security::{Caller, IdentityData, DB_USER};
use dbm_core::{Orchestrator, StatusValue};
use tempfile::TempDir;

pub const GROUP: &str = "secgroup";
pub const SETTLE: Duration = Duration::from_secs(60);

pub fn identities() -> IdentityData {
    IdentityData::default()
        .with_user("alice", &[GROUP], false)
        .with_user("bob", &[GROUP], false)
        .with_user("mallory", &["othergroup"], false)
        .with_user("admin", &[], true)
}

pub struct Env {
    pub dir: TempDir,
    pub orch: Orchestrator,
}

impl Env {
    /// A fresh service on `nodes` simulated nodes at 127.64.<octet>.x.
    pub fn new(nodes: u32, octet: u8) -> Env {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ServiceConfig::under(dir.path(), nodes, Ipv4Addr::new(127, 64, octet, 0));
        dbm_core::fsutil::write_json(&cfg.identities, &identities()).unwrap();
        let orch = Orchestrator::open(cfg).unwrap();
        Env { dir, orch }
    }

    pub fn who(&self, user: &str) -> Caller {
        self.orch.caller(user).unwrap()
    }

    pub fn create(&self, kind: &str, nodes: u32, name: &str) {
        self.orch
            .db_create(kind.parse().unwrap(), nodes, name, GROUP, &self.who("admin"))
            .unwrap();
    }

    pub fn start(&self, name: &str) -> StatusValue {
        self.orch.db_start(name, &self.who("alice")).unwrap();
        self.orch.wait_settled(name, SETTLE).unwrap()
    }

    pub fn stop(&self, name: &str) -> StatusValue {
        self.orch.db_stop(name, &self.who("alice")).unwrap();
        self.orch.wait_settled(name, SETTLE).unwrap()
    }

    pub fn fqdn(&self, name: &str) -> String {
        self.orch.dns_table().fqdn(name).unwrap()
    }

    /// Connect by DNS name only and authenticate with the located key.
    pub fn client(&self, name: &str, user: &str) -> EngineClient {
        let key = self.orch.locate_access_key(name, &self.who(user)).unwrap();
        let mut c = EngineClient::connect_name(&DnsClient::new(self.orch.dns_udp_addr()), &self.fqdn(name)).unwrap();
        c.authenticate(DB_USER, &key.value).unwrap();
        c
    }
}
