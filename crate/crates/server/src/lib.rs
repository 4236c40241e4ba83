//! HTTP service: suggestions for entity sets and an append-only log of
//! editor decisions applied to a live hierarchy.

pub mod api;
pub mod decisions;
pub mod error;
pub mod state;

use std::net::SocketAddr;

pub use api::router;
pub use decisions::{replay, DecisionLog, DecisionRecord, SuggestionRef, Verdict};
pub use error::ServiceError;
pub use state::{AppState, ServiceConfig};

/// Serves until ctrl-c, then writes the hierarchy snapshot if configured.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?);
    let refresher = state.spawn_refresher();
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    if let Some(task) = refresher {
        task.abort();
    }
    if let Some(dir) = state.config().snapshot_dir.clone() {
        state.write_snapshot(&dir).await?;
        log::info!("hierarchy written to {}", dir.display());
    }
    Ok(())
}
