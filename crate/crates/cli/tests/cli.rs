mod common;

use std::time::{Duration, Instant};

use common::{dbm, write_config, Server, BIN, GROUP};
use dbm_core::config::ServiceConfig;
use dbm_core::gateway::ApiClient;
use serde_json::Value;

#[test]
fn status_output_matches_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::spawn(&write_config(dir.path(), 8, 51));
    for (kind, n, name) in [("toy-kv", 2, "alpha"), ("scidb", 1, "beta"), ("accumulo", 1, "gamma")] {
        srv.dbm("admin", &["db_create", kind, "--num-nodes", &n.to_string(), name, GROUP]).ok();
    }
    srv.dbm("alice", &["db_start", "alpha", "--wait", "--timeout", "60"]).ok();

    let api = ApiClient::login(srv.url.clone(), "alice").unwrap().0;
    let (status, from_api) = api.raw("GET", "/databases", None).unwrap();
    assert_eq!(status, 200);
    let from_cli: Value = serde_json::from_str(&srv.dbm("alice", &["db_status", "--json"]).ok()).unwrap();
    assert_eq!(from_cli, from_api);

    let table = srv.dbm("alice", &["db_status"]).ok();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Folder Name") && lines[0].ends_with("Actions"), "{table}");
    assert_eq!(lines.len(), 4);
    let alpha = lines.iter().find(|l| l.starts_with("alpha")).unwrap();
    assert!(alpha.contains("started") && alpha.ends_with("Stop View Info"), "{alpha}");
    let beta = lines.iter().find(|l| l.starts_with("beta")).unwrap();
    assert!(beta.contains("toy-tabular") && beta.ends_with("Start Checkpoint View Info"), "{beta}");

    // Outsiders see no rows.
    let table = srv.dbm("mallory", &["db_status"]).ok();
    assert_eq!(table.lines().count(), 1);
    srv.dbm("alice", &["db_stop", "alpha", "--wait"]).ok();
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::spawn(&write_config(dir.path(), 4, 52));
    srv.dbm("admin", &["db_create", "toy-kv", "--num-nodes", "1", "one", GROUP]).ok();
    srv.dbm("admin", &["db_create", "toy-kv", "--num-nodes", "4", "four", GROUP]).ok();

    assert_eq!(srv.dbm("alice", &["db_status", "ghost"]).code, 2);
    assert_eq!(srv.dbm("alice", &["db_create", "toy-kv", "--num-nodes", "1", "x", GROUP]).code, 3);
    assert_eq!(srv.dbm("nobody", &["db_status"]).code, 3);
    assert_eq!(srv.dbm("admin", &["db_create", "toy-kv", "--num-nodes", "1", "one", GROUP]).code, 4);
    assert_eq!(srv.dbm("admin", &["db_create", "postgres", "--num-nodes", "1", "pg", GROUP]).code, 2);
    assert_eq!(srv.dbm("alice", &["db_stop", "one"]).code, 4);
    srv.dbm("alice", &["db_start", "one", "--wait"]).ok();
    let t = Instant::now();
    let r = srv.dbm("alice", &["db_start", "four"]);
    assert_eq!(r.code, 5, "{r:?}");
    assert!(t.elapsed() < Duration::from_secs(2));
    assert!(r.stderr.contains("insufficient"), "{}", r.stderr);
    srv.dbm("alice", &["db_stop", "one", "--wait"]).ok();

    // Missing arguments and an unreachable gateway.
    let out = std::process::Command::new(BIN).args(["db_start"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(dbm("http://127.0.0.1:1", "alice", &["db_status"]).code, 6);
}

#[test]
fn forced_stop_recovers_after_a_server_crash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 4, 53);
    let srv = Server::spawn(&config);
    srv.dbm("admin", &["db_create", "toy-kv", "--num-nodes", "2", "crashy", GROUP]).ok();
    srv.dbm("alice", &["db_start", "crashy", "--wait"]).ok();
    let key = srv.dbm("alice", &["db_accesskey", "crashy"]).ok();
    srv.kill();

    let srv = Server::spawn(&config);
    let info = |srv: &Server| -> Value { serde_json::from_str(&srv.dbm("alice", &["db_status", "crashy", "--json"]).ok()).unwrap() };
    assert_eq!(info(&srv)["status"]["value"], "started");
    assert_eq!(srv.dbm("alice", &["db_stop", "crashy", "--force"]).code, 3);
    let out = srv.dbm("admin", &["db_stop", "crashy", "--force"]).ok();
    assert!(out.contains("stopped"), "{out}");
    assert_eq!(info(&srv)["status"]["value"], "stopped");
    let cluster = ServiceConfig::load(&config).unwrap().cluster.cluster_root;
    for e in walkdir::WalkDir::new(&cluster).into_iter().filter_map(Result::ok) {
        assert!(!e.path().to_string_lossy().contains("crashy"), "leftover node data {}", e.path().display());
    }

    srv.dbm("alice", &["db_start", "crashy", "--wait"]).ok();
    let fresh = srv.dbm("alice", &["db_accesskey", "crashy"]).ok();
    assert_ne!(fresh, key);
    let mut c = srv.engine("crashy", fresh.trim());
    c.put("after", "crash").unwrap();
    srv.dbm("alice", &["db_stop", "crashy", "--wait"]).ok();
}

#[test]
fn init_and_bench_produce_usable_output() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("svc");
    let out = std::process::Command::new(BIN)
        .args(["init", "--root", root.to_str().unwrap(), "--nodes", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = ServiceConfig::load(&root.join("config.json")).unwrap();
    assert_eq!(cfg.cluster.nodes, 4);
    assert!(cfg.identities.exists());

    let scratch = dir.path().join("bench");
    let out = std::process::Command::new(BIN)
        .args(["bench", "--scratch", scratch.to_str().unwrap(), "--size", "256KiB", "--mode", "single", "--mode", "multi:2", "--trials", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(dbm_core::migrate::bench::CSV_HEADER));
    assert_eq!(lines.count(), 4);
}
