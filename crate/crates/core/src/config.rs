//! Service configuration, read from the JSON file named by `DBM_CONFIG`.

use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustersim::ClusterConfig;
use crate::dyndns::ZoneConfig;
use crate::fsutil;
use crate::migrate::CopyMode;

pub const CONFIG_ENV: &str = "DBM_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaemonMode {
    /// Each daemon is a `dbm daemon` child process.
    #[default]
    Process,
    /// Daemons run as threads of the server (tests, embedding).
    InProcess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Registry index, DNS state, run breadcrumbs.
    pub state_root: PathBuf,
    /// Parent of every database's central folder.
    pub central_root: PathBuf,
    /// User-visible access key area.
    pub keys_root: PathBuf,
    /// Identity table JSON.
    pub identities: PathBuf,
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub dns: ZoneConfig,
    /// Serve the DNS record HTTP API next to the UDP responder.
    #[serde(default = "yes")]
    pub dns_http: bool,
    pub gateway_addr: SocketAddr,
    /// `single`, `multi` or `multi:N`.
    #[serde(default = "default_copy_mode")]
    pub copy_mode: String,
    #[serde(default)]
    pub daemons: DaemonMode,
    /// Program providing the `daemon` subcommand; defaults to the running binary.
    #[serde(default)]
    pub daemon_program: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

fn default_copy_mode() -> String {
    "multi:3".into()
}

impl ServiceConfig {
    /// Everything under one directory, ephemeral ports, daemons in-process.
    pub fn under(root: &Path, nodes: u32, ip_base: Ipv4Addr) -> ServiceConfig {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        ServiceConfig {
            state_root: root.join("state"),
            central_root: root.join("central"),
            keys_root: root.join("keys"),
            identities: root.join("identities.json"),
            cluster: ClusterConfig::new(nodes, root.join("cluster")).with_ip_base(ip_base),
            dns: ZoneConfig {
                udp_addr: any,
                http_addr: any,
                ..ZoneConfig::default()
            },
            dns_http: false,
            gateway_addr: any,
            copy_mode: default_copy_mode(),
            daemons: DaemonMode::InProcess,
            daemon_program: None,
        }
    }

    pub fn load(path: &Path) -> io::Result<ServiceConfig> {
        let cfg: ServiceConfig = fsutil::read_json(path)?;
        cfg.copy_mode()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn copy_mode(&self) -> io::Result<CopyMode> {
        self.copy_mode
            .parse()
            .map_err(|e: String| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.state_root.join("runs")
    }

    pub fn dns_dir(&self) -> PathBuf {
        self.state_root.join("dns")
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.state_root.join("registry")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let d = tempfile::tempdir().unwrap();
        let cfg = ServiceConfig::under(d.path(), 8, Ipv4Addr::new(127, 64, 9, 0));
        let p = d.path().join("c.json");
        cfg.save(&p).unwrap();
        assert_eq!(ServiceConfig::load(&p).unwrap(), cfg);

        let minimal = serde_json::json!({
            "state_root": "/s", "central_root": "/c", "keys_root": "/k",
            "identities": "/i.json", "gateway_addr": "127.0.0.1:8080",
            "cluster": {"nodes": 8, "cluster_root": "/cl"}
        });
        let cfg: ServiceConfig = serde_json::from_value(minimal).unwrap();
        assert_eq!(cfg.cluster.ip_base, Ipv4Addr::new(127, 64, 0, 0));
        assert_eq!(cfg.dns.zone, "db.supercloud.test.");
        assert_eq!(cfg.daemons, DaemonMode::Process);
        assert_eq!(cfg.copy_mode().unwrap(), CopyMode::multi(3));

        let mut bad = cfg.clone();
        bad.copy_mode = "turbo".into();
        bad.save(&p).unwrap();
        assert!(ServiceConfig::load(&p).is_err());
    }
}
