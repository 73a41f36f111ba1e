//! `dbm`: create, start, stop, checkpoint and restore on-demand databases.

mod local;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 6;

#[derive(Parser)]
#[command(name = "dbm", version, about = "On-demand database lifecycle orchestrator")]
pub struct Cli {
    /// Service configuration file.
    #[arg(long, global = true, env = "DBM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Gateway base URL; defaults to the configured gateway address.
    #[arg(long, global = true, env = "DBM_URL")]
    pub url: Option<String>,
    /// Identity to act as.
    #[arg(long = "as-user", global = true, env = "DBM_USER")]
    pub as_user: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the orchestrator, DNS responder and HTTP gateway.
    Serve,
    /// Write a starter configuration and identity table.
    Init(local::InitArgs),
    /// Benchmark single- and multi-stream copies; prints CSV.
    Bench(local::BenchArgs),
    /// Run one engine daemon (used by the service).
    #[command(hide = true)]
    Daemon {
        /// Daemon configuration JSON.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Create a database (administrators only).
    #[command(name = "db_create")]
    Create {
        /// Engine: toy-kv (alias accumulo) or toy-tabular (alias scidb).
        engine: String,
        #[arg(long = "num-nodes")]
        num_nodes: u32,
        name: String,
        group: String,
    },
    /// Start a database on newly allocated nodes.
    #[command(name = "db_start")]
    Start {
        name: String,
        #[command(flatten)]
        wait: Wait,
    },
    /// Stop a started database.
    #[command(name = "db_stop")]
    Stop {
        name: String,
        /// Administrator recovery for a stuck or orphaned database.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        wait: Wait,
    },
    /// Archive a stopped database's central folder.
    #[command(name = "db_checkpoint")]
    Checkpoint { name: String },
    /// Replace a stopped database's data with a checkpoint (administrators only).
    #[command(name = "db_restore")]
    Restore { name: String, checkpoint: String },
    /// Status table, or View Info for one database.
    #[command(name = "db_status")]
    Status {
        name: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// List a database's checkpoints.
    #[command(name = "db_checkpoints")]
    Checkpoints {
        name: String,
        #[arg(long)]
        json: bool,
    },
    /// Print the current access key for a database.
    #[command(name = "db_accesskey")]
    AccessKey {
        name: String,
        #[arg(long)]
        json: bool,
    },
    /// Remove a user from the database's group; a restart completes it.
    #[command(name = "db_revoke")]
    Revoke { name: String, user: String },
}

#[derive(Args, Clone, Copy)]
pub struct Wait {
    /// Block until the database settles.
    #[arg(long)]
    pub wait: bool,
    /// Seconds to wait with --wait.
    #[arg(long, default_value_t = 300)]
    pub timeout: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Serve => local::serve(&cli),
        Command::Init(a) => local::init(a),
        Command::Bench(a) => local::bench(a),
        Command::Daemon { spec } => local::daemon(spec),
        _ => remote::run(&cli),
    };
    ExitCode::from(code)
}
