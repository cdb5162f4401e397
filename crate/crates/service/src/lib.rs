//! HTTP and WebSocket host for engine sessions.
//!
//! Each session owns one engine on its own task. Decision events are appended
//! to `<data_dir>/<session_id>.events.log` and fanned out to WebSocket
//! subscribers in the same order, each subscriber keeping its own cursor.

pub mod api;
pub mod bundle;
pub mod error;
pub mod session;

use std::path::PathBuf;

pub use api::{router, AppState};
pub use bundle::ExportBundle;
pub use error::{Result, ServiceError};
pub use session::{CreateSession, PopulationSpec, ReplayRate, SourceSpec};

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Where event logs are written.
    pub data_dir: PathBuf,
}

/// Serves the API on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, options: ServiceOptions) -> std::io::Result<()> {
    std::fs::create_dir_all(&options.data_dir)?;
    tracing::info!(addr = ?listener.local_addr()?, data_dir = %options.data_dir.display(), "serving");
    axum::serve(listener, router(AppState::new(options))).await
}
