use std::time::Duration;

use dbm_core::config::ServiceConfig;
use dbm_core::gateway::{ApiClient, ApiFailure};
use dbm_core::registry::{Action, DatabaseSummary};
use dbm_core::{EngineKind, StatusValue};
use serde::Serialize;

use crate::{Cli, Command, Wait, EXIT_INTERNAL, EXIT_USAGE};

enum Failure {
    Usage(String),
    Api(ApiFailure),
    Other(u8, String),
}

impl From<ApiFailure> for Failure {
    fn from(e: ApiFailure) -> Self {
        Failure::Api(e)
    }
}

type Outcome = Result<(), Failure>;

fn base_url(cli: &Cli) -> Result<String, Failure> {
    if let Some(u) = &cli.url {
        return Ok(u.clone());
    }
    let Some(path) = &cli.config else {
        return Err(Failure::Usage("no gateway: pass --url, set DBM_URL or DBM_CONFIG".into()));
    };
    let cfg = ServiceConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(format!("http://{}", cfg.gateway_addr))
}

pub fn run(cli: &Cli) -> u8 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Api(e)) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
        Err(Failure::Other(code, m)) => {
            eprintln!("error: {m}");
            code
        }
    }
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn actions(set: &std::collections::BTreeSet<Action>) -> String {
    let names: Vec<&str> = set
        .iter()
        .map(|a| match a {
            Action::Start => "Start",
            Action::Stop => "Stop",
            Action::Checkpoint => "Checkpoint",
            Action::ViewInfo => "View Info",
        })
        .collect();
    names.join(" ")
}

fn print_table(rows: &[DatabaseSummary]) {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Folder Name".len());
    let t = rows.iter().map(|r| r.type_label.len()).max().unwrap_or(0).max("Type".len());
    println!("{:<w$}  {:<t$}  {:<13}  Actions", "Folder Name", "Type", "Status");
    for r in rows {
        println!("{:<w$}  {:<t$}  {:<13}  {}", r.name, r.type_label, r.status.as_str(), actions(&r.actions));
    }
}

fn settle(c: &ApiClient, name: &str, wait: Wait, want: StatusValue) -> Outcome {
    if !wait.wait {
        return Ok(());
    }
    let s = c.wait_settled(name, Duration::from_secs(wait.timeout))?;
    if s.is_transient() {
        return Err(Failure::Other(EXIT_INTERNAL, format!("{name} still {s} after {}s", wait.timeout)));
    }
    if s != want {
        return Err(Failure::Other(
            EXIT_INTERNAL,
            format!("{name} ended {s}, not {want}; see db_status {name}"),
        ));
    }
    println!("{name}: {s}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Outcome {
    let url = base_url(cli)?;
    let Some(user) = &cli.as_user else {
        return Err(Failure::Usage("no identity: pass --as-user or set DBM_USER".into()));
    };
    let (c, _) = ApiClient::login(url, user)?;
    match &cli.command {
        Command::Create {
            engine,
            num_nodes,
            name,
            group,
        } => {
            let kind: EngineKind = engine.parse().map_err(Failure::Usage)?;
            let d = c.create(kind, *num_nodes, name, group)?;
            println!("created {} ({}, {} nodes, group {})", d.name, d.type_label(), d.num_nodes, d.security_group);
        }
        Command::Start { name, wait } => {
            let o = c.act(name, Action::Start)?;
            println!("{name}: {} (job {})", o.status, o.job_id.unwrap_or_default());
            settle(&c, name, *wait, StatusValue::Started)?;
        }
        Command::Stop { name, force, wait } => {
            if *force {
                let s = c.force_stop(name)?;
                println!("{name}: {} (forced)", s.value);
            } else {
                let o = c.act(name, Action::Stop)?;
                println!("{name}: {}", o.status);
                settle(&c, name, *wait, StatusValue::Stopped)?;
            }
        }
        Command::Checkpoint { name } => {
            let o = c.act(name, Action::Checkpoint)?;
            if let Some(cp) = o.checkpoint {
                println!("{}", cp.id);
            }
        }
        Command::Restore { name, checkpoint } => {
            c.restore(name, checkpoint)?;
            println!("{name}: restored {checkpoint}");
        }
        Command::Status { name: None, json } => {
            let rows = c.list()?;
            if *json {
                print_json(&rows);
            } else {
                print_table(&rows);
            }
        }
        Command::Status { name: Some(name), json } => {
            let info = c.info(name)?;
            if *json {
                print_json(&info);
            } else {
                let d = &info.descriptor;
                println!("name:      {}", d.name);
                println!("type:      {}", info.type_label);
                println!("status:    {} since {}", info.status.value, info.status.since.to_rfc3339());
                println!("nodes:     {}", d.num_nodes);
                println!("group:     {}", d.security_group);
                println!("dns:       {}", info.dns_names.join(" "));
                for e in &info.endpoints {
                    println!("endpoint:  {}:{} ({:?})", e.fqdn, e.port, e.role);
                }
                for h in &info.history {
                    println!("history:   {} {}", h.since.to_rfc3339(), h.value);
                }
                for cp in &info.checkpoints {
                    println!("checkpoint: {} ({} bytes, by {})", cp.id, cp.size_bytes, cp.created_by);
                }
            }
        }
        Command::Checkpoints { name, json } => {
            let cps = c.checkpoints(name)?;
            if *json {
                print_json(&cps);
            } else {
                for cp in cps {
                    println!("{}  {}  {} bytes  {}", cp.id, cp.created_at.to_rfc3339(), cp.size_bytes, cp.created_by);
                }
            }
        }
        Command::AccessKey { name, json } => {
            let k = c.access_key(name)?;
            if *json {
                print_json(&k);
            } else {
                println!("{}", k.value);
            }
        }
        Command::Revoke { name, user } => {
            let r = c.revoke(name, user)?;
            println!(
                "{user} removed from {}; revocation {:?}: {}",
                r.plan.group, r.state, r.plan.next_step
            );
        }
        Command::Serve | Command::Init(_) | Command::Bench(_) | Command::Daemon { .. } => unreachable!(),
    }
    Ok(())
}
