//! Warm-start wire surface: a JSON-RPC 2.0 server exposing three tools
//! (get_context_snapshot, push_evidence, probe_fidelity) over stdio and
//! HTTP, plus the in-process snapshot pipeline the simulation harness
//! embeds directly.

pub mod probe;
pub mod rpc;
pub mod server;
pub mod snapshot;
pub mod transport;

pub use probe::{FidelityProbe, ProbeReport};
pub use server::{LcServer, ServerConfig};
pub use snapshot::{
    assemble_snapshot, ContextSnapshot, SnapshotError, SnapshotRequest, WorkingEntry,
};
