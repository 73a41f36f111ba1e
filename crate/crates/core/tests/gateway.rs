mod common;

use std::time::Duration;

use common::{Env, GROUP};
use dbm_core::gateway::{ApiClient, Gateway, SessionKey};
use dbm_core::registry::Action;
use dbm_core::security::UserEntry;
use dbm_core::StatusValue::{self, *};
use serde_json::{json, Value};

struct Api {
    env: Env,
    gw: Gateway,
}

impl Api {
    fn new(octet: u8) -> Api {
        let env = Env::new(8, octet);
        let gw = Gateway::spawn_on(env.orch.clone(), SessionKey::generate(), "127.0.0.1:0".parse().unwrap()).unwrap();
        Api { env, gw }
    }

    fn client(&self, user: &str) -> ApiClient {
        ApiClient::login(self.gw.url(), user).unwrap().0
    }

    fn ensure(&self, name: &str, want: StatusValue) {
        let now = self.env.orch.wait_settled(name, common::SETTLE).unwrap();
        if now != want {
            match want {
                Started => assert_eq!(self.env.start(name), Started),
                _ => assert_eq!(self.env.stop(name), Stopped),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Admin,
    Member,
    Outsider,
    Anonymous,
}

const OPS: [&str; 11] = [
    "list", "info", "checkpoints", "accesskey", "create", "start", "stop", "checkpoint", "restore", "revoke", "force-stop",
];

/// Expected HTTP status for one cell, written out from the access rules.
fn expected(role: Role, op: &str, status: StatusValue) -> u16 {
    use Role::*;
    if role == Anonymous {
        return 401;
    }
    let member = role == Member;
    let admin = role == Admin;
    match op {
        "list" => 200,
        "info" | "checkpoints" => if member || admin { 200 } else { 403 },
        "accesskey" => if member { 200 } else { 403 },
        "create" => if admin { 201 } else { 403 },
        "start" | "checkpoint" => match (member, status) {
            (false, _) => 403,
            (true, Stopped) => 200,
            _ => 409,
        },
        "stop" => match (member, status) {
            (false, _) => 403,
            (true, Started) => 200,
            _ => 409,
        },
        "restore" => match (admin, status) {
            (false, _) => 403,
            (true, Stopped) => 200,
            _ => 409,
        },
        "revoke" => if admin { 200 } else { 403 },
        "force-stop" => match (admin, status) {
            (false, _) => 403,
            (true, Stopped) => 409,
            _ => 200,
        },
        _ => unreachable!(),
    }
}

fn request(op: &str, db: &str, seq: usize, checkpoint: &str) -> (&'static str, String, Option<Value>) {
    let action = |a: &str| Some(json!({"action": a, "idempotency_token": format!("m-{seq}")}));
    match op {
        "list" => ("GET", "/databases".into(), None),
        "info" => ("GET", format!("/databases/{db}"), None),
        "checkpoints" => ("GET", format!("/databases/{db}/checkpoints"), None),
        "accesskey" => ("GET", format!("/databases/{db}/accesskey"), None),
        "create" => (
            "POST",
            "/databases".into(),
            Some(json!({"engine": "toy-kv", "num_nodes": 1, "name": format!("made{seq}"), "group": GROUP})),
        ),
        "start" => ("POST", format!("/databases/{db}/actions"), action("Start")),
        "stop" => ("POST", format!("/databases/{db}/actions"), action("Stop")),
        "checkpoint" => ("POST", format!("/databases/{db}/actions"), action("Checkpoint")),
        "restore" => ("POST", format!("/databases/{db}/restore"), Some(json!({"checkpoint": checkpoint}))),
        "revoke" => ("POST", format!("/databases/{db}/revoke"), Some(json!({"user": "carol"}))),
        "force-stop" => ("POST", format!("/databases/{db}/force-stop"), Some(json!({}))),
        _ => unreachable!(),
    }
}

#[test]
fn authorization_matrix() {
    let api = Api::new(31);
    api.env.create("toy-kv", 2, "matrix");
    api.ensure("matrix", Started);
    api.ensure("matrix", Stopped);
    let cp = api.env.orch.db_checkpoint("matrix", &api.env.who("alice")).unwrap().id;
    let clients = [
        (Role::Admin, api.client("admin")),
        (Role::Member, api.client("alice")),
        (Role::Outsider, api.client("mallory")),
        (Role::Anonymous, ApiClient::new(api.gw.url())),
    ];
    let carol = UserEntry {
        groups: [GROUP.to_string()].into(),
        admin: false,
    };
    let mut seq = 0;
    let mut failures = Vec::new();
    for status in [Stopped, Started] {
        for op in OPS {
            for (role, c) in &clients {
                seq += 1;
                api.ensure("matrix", status);
                api.env.orch.identities().upsert_user("carol", carol.clone()).unwrap();
                let (method, path, body) = request(op, "matrix", seq, &cp);
                let (got, v) = c.raw(method, &path, body).unwrap();
                let want = expected(*role, op, status);
                if got != want {
                    failures.push(format!("{role:?} {op} on {status}: got {got}, want {want}: {v}"));
                }
                if got >= 400 {
                    let e = &v["error"];
                    assert!(e["code"].is_string() && e["message"].is_string(), "unstructured error {v}");
                }
                if op == "list" && got == 200 {
                    let visible = v.as_array().unwrap().iter().any(|r| r["name"] == "matrix");
                    assert_eq!(visible, *role != Role::Outsider, "{role:?} list visibility");
                }
            }
        }
    }
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
    api.ensure("matrix", Stopped);
}

#[test]
fn replayed_tokens_return_the_first_outcome() {
    let api = Api::new(32);
    api.env.create("toy-kv", 2, "idem");
    let alice = api.client("alice");
    let first = alice.action("idem", Action::Start, "tok-1").unwrap();
    assert_eq!(first.status, Starting);
    assert_eq!(alice.wait_settled("idem", common::SETTLE).unwrap(), Started);
    let again = alice.action("idem", Action::Start, "tok-1").unwrap();
    assert_eq!(again, first);
    assert_eq!(api.env.orch.registry().history("idem").unwrap().len(), 3);

    let err = alice.action("idem", Action::Start, "tok-2").unwrap_err();
    assert_eq!(err.status(), Some(409));
    assert_eq!(alice.action("idem", Action::Start, "tok-2").unwrap_err(), err);

    // Tokens are per user: bob's "tok-1" is a new request.
    let bob = api.client("bob");
    assert_eq!(bob.action("idem", Action::Start, "tok-1").unwrap_err().status(), Some(409));
    alice.act("idem", Action::Stop).unwrap();
    assert_eq!(alice.wait_settled("idem", common::SETTLE).unwrap(), Stopped);
}

#[test]
fn errors_are_structured() {
    let api = Api::new(33);
    api.env.create("toy-kv", 6, "big");
    api.env.create("toy-kv", 4, "small");
    let alice = api.client("alice");
    alice.act("big", Action::Start).unwrap();
    assert_eq!(alice.wait_settled("big", common::SETTLE).unwrap(), Started);

    let (s, v) = alice
        .raw("POST", "/databases/small/actions", Some(json!({"action": "Start", "idempotency_token": "x"})))
        .unwrap();
    assert_eq!(s, 503);
    assert_eq!(v["error"]["code"], "InsufficientResources");
    assert_eq!(v["error"]["details"], json!({"free": 2, "requested": 4}));

    let (s, v) = alice.raw("POST", "/databases/small/actions", Some(json!({"action": "Dance"}))).unwrap();
    assert_eq!(s, 400);
    assert_eq!(v["error"]["code"], "BadRequest");
    let (s, v) = alice.raw("GET", "/nowhere", None).unwrap();
    assert_eq!((s, v["error"]["code"].as_str()), (404, Some("NoSuchRoute")));
    let (s, v) = alice.raw("GET", "/databases/ghost", None).unwrap();
    assert_eq!((s, v["error"]["code"].as_str()), (404, Some("NotFound")));

    let forged = ApiClient::new(api.gw.url()).with_token("YWRtaW46OTk5OTk5OTk5OQ.00");
    assert_eq!(forged.raw("GET", "/databases", None).unwrap().0, 401);
    let (s, _) = ApiClient::new(api.gw.url()).raw("POST", "/login", Some(json!({"user": "dbservice"}))).unwrap();
    assert_eq!(s, 401);

    let rows = alice.list().unwrap();
    let big = rows.iter().find(|r| r.name == "big").unwrap();
    assert_eq!(big.actions, Started.permitted_actions());
    assert_eq!(big.type_label, "toy-kv 1.0");
    alice.act("big", Action::Stop).unwrap();
    alice.wait_settled("big", Duration::from_secs(60)).unwrap();
}
