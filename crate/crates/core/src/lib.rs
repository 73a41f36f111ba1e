//! On-demand database lifecycle orchestration.
//!
//! Databases live on central storage while stopped and are migrated onto
//! scheduler-allocated nodes of a simulated cluster when started. The crate is
//! organized around the pieces that make that work:
//!
//! * [`registry`]: durable catalog of databases and their lifecycle status.
//! * [`clustersim`]: simulated nodes and a scheduler with prolog/epilog hooks.
//! * [`migrate`]: single- and multi-stream file tree copies plus a benchmark.
//! * [`dyndns`]: dynamic DNS sub-zone with HTTP CRUD and a UDP responder.
//! * [`security`]: identities, service-only secrets and rotated access keys.
//! * [`engines`]: toy database engines run as real daemons on node IPs.
//! * [`lifecycle`]: create, start, stop, checkpoint and restore.
//! * [`gateway`]: HTTP API and the client used by the `dbm` CLI.

pub mod clustersim;
pub mod config;
pub mod dyndns;
pub mod engines;
pub mod fsutil;
pub mod gateway;
pub mod lifecycle;
pub mod migrate;
pub mod registry;
pub mod security;

pub use config::ServiceConfig;
pub use engines::EngineKind;
pub use lifecycle::Orchestrator;
pub use registry::{DatabaseDescriptor, DatabaseStatus, Registry, StatusValue};
