//! Ingestion service for bridge monitoring nodes.
//!
//! Nodes connect over TCP and send hex-framed packets one at a time, each
//! answered by an ACK line. The [`Ingestor`] persists every accepted packet
//! exactly once into a [`RecordStore`], reassembles sessions, and hands
//! complete sessions to an [`Analyzer`] on a background thread so that
//! ACK latency does not depend on analysis time.

pub mod assembly;
pub mod export;
pub mod ingestor;
pub mod rows;
pub mod server;
pub mod store;

use thiserror::Error;

pub use assembly::{content_hash, AssemblyError, Insert, SessionAssembly, SessionKey};
pub use export::{export_all, export_table_csv};
pub use ingestor::{
    Analyzer, Clock, FixedClock, FusionAnalyzer, IngestConfig, Ingestor, SessionStatus,
    SystemClock, DEFAULT_STALE_AFTER_MS,
};
pub use rows::{
    read_analysis, read_store, DataRow, InfoRow, QuarantineRow, StateRow, StoredSession,
};
pub use server::Server;
pub use store::{FaultPlan, RecordStore, RecoveryReport};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("store error: {0}")]
    Store(String),
    #[error("store stopped accepting writes (injected crash)")]
    Crashed,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error")]
    Integrity(#[from] AssemblyError),
    #[error("session quarantined: {0}")]
    Quarantined(String),
    #[error("cannot bind listener: {0}")]
    Bind(String),
}
