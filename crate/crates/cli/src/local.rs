use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use clap::Args;
use dbm_core::config::{DaemonMode, ServiceConfig};
use dbm_core::engines::daemon::{self, DaemonConfig};
use dbm_core::gateway::Gateway;
use dbm_core::migrate::bench::{self, BenchmarkConfig};
use dbm_core::migrate::{CopyMode, Direction};
use dbm_core::security::IdentityData;
use dbm_core::{fsutil, Orchestrator};

use crate::{Cli, EXIT_INTERNAL, EXIT_USAGE};

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

pub fn serve(cli: &Cli) -> u8 {
    let Some(path) = &cli.config else {
        return fail(EXIT_USAGE, "no configuration: pass --config or set DBM_CONFIG");
    };
    let cfg = match ServiceConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let orch = match Orchestrator::open(cfg) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_INTERNAL, e),
    };
    let gw = match Gateway::spawn(orch.clone()) {
        Ok(g) => g,
        Err(e) => return fail(EXIT_INTERNAL, format!("gateway: {e}")),
    };
    println!("gateway http://{}", gw.addr());
    println!("dns udp {}", orch.dns_udp_addr());
    if let Some(a) = orch.dns_http_addr() {
        println!("dns http http://{a}");
    }
    let _ = std::io::stdout().flush();
    // Runs until killed. Daemons exit when their stdin closes with us.
    loop {
        std::thread::park();
    }
}

pub fn daemon(config: &Path) -> u8 {
    let cfg: DaemonConfig = match fsutil::read_json(config) {
        Ok(c) => c,
        Err(e) => {
            println!("FAIL cannot read {}: {e}", config.display());
            return 1;
        }
    };
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut sink = [0u8; 64];
        let mut stdin = std::io::stdin();
        while matches!(stdin.read(&mut sink), Ok(n) if n > 0) {}
        let _ = tx.send(());
    });
    let r = daemon::run(cfg, rx, |ready| {
        match ready {
            Ok(addr) => println!("READY {addr}"),
            Err(e) => println!("FAIL {}", e.replace('\n', " ")),
        }
        let _ = std::io::stdout().flush();
    });
    match r {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("daemon: {e}");
            1
        }
    }
}

#[derive(Args)]
pub struct InitArgs {
    /// Directory for state, central storage, keys and node scratch.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value_t = 8)]
    nodes: u32,
    /// Base address; node-N listens on this plus N.
    #[arg(long, default_value = "127.64.0.0")]
    ip_base: Ipv4Addr,
    #[arg(long, default_value = "127.0.0.1:8080")]
    gateway: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:5353")]
    dns_udp: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:8053")]
    dns_http: SocketAddr,
}

pub fn init(a: &InitArgs) -> u8 {
    let mut cfg = ServiceConfig::under(&a.root, a.nodes, a.ip_base);
    cfg.gateway_addr = a.gateway;
    cfg.dns.udp_addr = a.dns_udp;
    cfg.dns.http_addr = a.dns_http;
    cfg.dns_http = true;
    cfg.daemons = DaemonMode::Process;
    let path = a.root.join("config.json");
    let run = || -> std::io::Result<()> {
        std::fs::create_dir_all(&a.root)?;
        cfg.save(&path)?;
        if !cfg.identities.exists() {
            let ids = IdentityData::default()
                .with_user("admin", &[], true)
                .with_user("alice", &["secgroup"], false)
                .with_user("bob", &["secgroup"], false);
            fsutil::write_json(&cfg.identities, &ids)?;
        }
        Ok(())
    };
    if let Err(e) = run() {
        return fail(EXIT_INTERNAL, e);
    }
    println!("{}", path.display());
    0
}

#[derive(Args)]
pub struct BenchArgs {
    /// Scratch directory; memory-backed storage gives the cleanest numbers.
    #[arg(long, default_value = "/dev/shm/dbm-bench")]
    scratch: PathBuf,
    /// Bytes per node, e.g. 64MiB. Repeatable.
    #[arg(long = "size", default_values = ["64MiB", "256MiB"], value_parser = bench::parse_size)]
    sizes: Vec<u64>,
    /// Copy modes: single, multi:<n>. Repeatable.
    #[arg(long = "mode", default_values = ["single", "multi:2", "multi:3"])]
    modes: Vec<CopyMode>,
    #[arg(long, default_value_t = 3)]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(a: &BenchArgs) -> u8 {
    let cfg = BenchmarkConfig {
        sizes_per_node: a.sizes.clone(),
        modes: a.modes.clone(),
        directions: vec![Direction::CentralToLocal, Direction::LocalToCentral],
        trials: a.trials,
        scratch: a.scratch.clone(),
        seed: a.seed,
    };
    let table = match bench::run_benchmark(&cfg) {
        Ok(t) => t,
        Err(bench::BenchError::EmptyMatrix) => return fail(EXIT_USAGE, "empty benchmark matrix"),
        Err(e @ bench::BenchError::InsufficientScratch { .. }) => return fail(5, e),
        Err(e) => return fail(EXIT_INTERNAL, e),
    };
    let _ = fsutil::remove_tree(&a.scratch);
    let csv = table.to_csv();
    match &a.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, csv) {
                return fail(EXIT_INTERNAL, e);
            }
        }
        None => print!("{csv}"),
    }
    0
}
