mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::{Env, GROUP};
use dbm_core::dyndns::DnsClient;
use dbm_core::engines::{EngineClient, EngineError};
use dbm_core::lifecycle::LifecycleError;
use dbm_core::security::{self, RevocationState, DB_USER, SECRETS_DIR};
use dbm_core::StatusValue::*;
use walkdir::WalkDir;

fn auth(env: &Env, name: &str, key: &str) -> Result<(), EngineError> {
    let mut c = EngineClient::connect_name(&DnsClient::new(env.orch.dns_udp_addr()), &env.fqdn(name)).unwrap();
    c.authenticate(DB_USER, key)
}

/// Occurrences of any needle in files under `root`, skipping each central
/// folder's own `secrets/` directory.
fn scan_files(root: &Path, needles: &[String]) -> Vec<String> {
    let mut hits = Vec::new();
    let walker = WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| !(e.file_name() == SECRETS_DIR && e.path().parent().and_then(|p| p.parent()).is_some_and(|p| p.ends_with("central"))));
    for e in walker.filter_map(Result::ok).filter(|e| e.file_type().is_file()) {
        let bytes = std::fs::read(e.path()).unwrap_or_default();
        for n in needles {
            if bytes.windows(n.len()).any(|w| w == n.as_bytes()) {
                hits.push(e.path().display().to_string());
            }
        }
    }
    hits
}

fn scan_text(what: &str, text: &str, needles: &[String]) -> Vec<String> {
    needles.iter().filter(|n| text.contains(n.as_str())).map(|_| what.to_string()).collect()
}

#[test]
fn keys_rotate_per_start_and_stale_keys_fail() {
    let env = Env::new(4, 21);
    env.create("toy-kv", 2, "keyed");
    assert!(matches!(
        env.orch.locate_access_key("keyed", &env.who("alice")),
        Err(LifecycleError::NoKeyYet(_))
    ));

    let mut seen: Vec<String> = Vec::new();
    for cycle in 1..=5u64 {
        assert_eq!(env.start("keyed"), Started);
        let key = env.orch.locate_access_key("keyed", &env.who("bob")).unwrap();
        assert_eq!(key.generation, cycle);
        assert_eq!(key.value.len(), security::SECRET_LEN);
        assert_eq!(key.stored_at, env.orch.config().keys_root.join("keyed").join("accesskey"));
        assert_eq!(std::fs::read_to_string(&key.stored_at).unwrap(), format!("{}\n", key.value));
        assert_eq!(dbm_core::fsutil::mode_of(&key.stored_at).unwrap(), 0o640);
        let meta = env.orch.keys().meta("keyed").unwrap().unwrap();
        assert_eq!(meta.group, GROUP);

        let keys = Some(env.orch.keys());
        assert!(security::read_as(&env.who("alice"), &key.stored_at, keys).is_ok());
        assert!(matches!(
            security::read_as(&env.who("mallory"), &key.stored_at, keys),
            Err(security::SecurityError::PermissionDenied)
        ));

        auth(&env, "keyed", &key.value).unwrap();
        for stale in &seen {
            assert!(matches!(auth(&env, "keyed", stale), Err(EngineError::AuthFailed)));
        }
        seen.push(key.value);
        assert_eq!(env.stop("keyed"), Stopped);
    }
    assert_eq!(seen.iter().collect::<BTreeSet<_>>().len(), 5);
    assert!(matches!(
        env.orch.locate_access_key("keyed", &env.who("mallory")),
        Err(LifecycleError::PermissionDenied(_))
    ));
}

#[test]
fn revocation_needs_a_restart() {
    let env = Env::new(4, 22);
    env.create("toy-kv", 1, "rev");
    assert_eq!(env.start("rev"), Started);
    let old = env.orch.locate_access_key("rev", &env.who("bob")).unwrap();

    assert!(matches!(
        env.orch.revoke_user("rev", "bob", &env.who("alice")),
        Err(LifecycleError::PermissionDenied(_))
    ));
    let report = env.orch.revoke_user("rev", "bob", &env.who("admin")).unwrap();
    assert_eq!(report.state, RevocationState::Incomplete);
    assert!(matches!(
        env.orch.revoke_user("rev", "bob", &env.who("admin")),
        Err(LifecycleError::UserNotInGroup { .. })
    ));
    // Step one alone: bob cannot look the key up, but the old key still works.
    assert!(matches!(
        env.orch.locate_access_key("rev", &env.who("bob")),
        Err(LifecycleError::PermissionDenied(_))
    ));
    auth(&env, "rev", &old.value).unwrap();
    assert_eq!(env.orch.revocation_state(&report.plan).unwrap(), RevocationState::Incomplete);

    assert_eq!(env.stop("rev"), Stopped);
    assert_eq!(env.start("rev"), Started);
    assert!(matches!(auth(&env, "rev", &old.value), Err(EngineError::AuthFailed)));
    assert_eq!(env.orch.revocation_state(&report.plan).unwrap(), RevocationState::Complete);
    let fresh = env.orch.locate_access_key("rev", &env.who("alice")).unwrap();
    auth(&env, "rev", &fresh.value).unwrap();
    assert_eq!(env.stop("rev"), Stopped);
}

#[test]
fn secrets_never_leave_the_secrets_directory() {
    let env = Env::new(8, 23);
    let root = env.dir.path().to_path_buf();
    let mut needles = Vec::new();
    for (kind, name) in [("toy-kv", "scan1"), ("toy-tabular", "scan2")] {
        env.create(kind, 3, name);
        let central = env.orch.descriptor(name).unwrap().central_path;
        needles.push(security::load_shared_secret(name, &central).unwrap().value);
        needles.push(security::load_superuser(name, &central).unwrap().value);
    }
    let admin = env.who("admin");
    let mut hits = Vec::new();
    let scan_api = |env: &Env, hits: &mut Vec<String>| {
        for name in ["scan1", "scan2"] {
            let info = serde_json::to_string(&env.orch.db_info(name, &admin).unwrap()).unwrap();
            hits.extend(scan_text("db_info", &info, &needles));
            if let Ok(k) = env.orch.locate_access_key(name, &env.who("alice")) {
                hits.extend(scan_text("access key", &serde_json::to_string(&k).unwrap(), &needles));
            }
        }
        let list = serde_json::to_string(&env.orch.list(&admin)).unwrap();
        hits.extend(scan_text("list", &list, &needles));
        let dns = serde_json::to_string(&env.orch.dns_table().records()).unwrap();
        hits.extend(scan_text("dns records", &dns, &needles));
    };

    for name in ["scan1", "scan2"] {
        assert_eq!(env.start(name), Started);
        let mut c = env.client(name, "alice");
        c.put("k", "v").unwrap();
    }
    hits.extend(scan_files(&root, &needles));
    scan_api(&env, &mut hits);
    for name in ["scan1", "scan2"] {
        assert_eq!(env.stop(name), Stopped);
        env.orch.db_checkpoint(name, &env.who("alice")).unwrap();
    }
    hits.extend(scan_files(&root, &needles));
    scan_api(&env, &mut hits);
    assert!(hits.is_empty(), "secret values found in: {hits:?}");

    // The scanner itself finds a planted value.
    std::fs::write(root.join("keys").join("planted"), &needles[0]).unwrap();
    assert_eq!(scan_files(&root, &needles).len(), 1);
}
