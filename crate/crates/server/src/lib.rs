//! HTTP service exposing the meditools engine.

pub mod api;
pub mod config;
pub mod error;
pub mod mailer;
pub mod state;

use std::time::Duration;

use tokio::net::TcpListener;

pub use api::router;
pub use config::{Config, StartupError};
pub use error::ApiError;
pub use state::AppState;

const HOUSEKEEPING_INTERVAL: Duration = Duration::from_secs(300);

/// Runs until `shutdown` resolves, then drains requests and saves sessions.
pub async fn serve_with_shutdown(
    state: AppState,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let restored = state.restore_sessions().map_err(std::io::Error::other)?;
    if restored > 0 {
        tracing::info!(restored, "sessions restored from snapshot");
    }
    let housekeeping = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(HOUSEKEEPING_INTERVAL);
            tick.tick().await;
            loop {
                tick.tick().await;
                let evicted = state.store.evict_idle();
                if evicted > 0 {
                    tracing::info!(evicted, "idle sessions evicted");
                }
                if let Err(e) = state.save_sessions() {
                    tracing::warn!(error = %e, "periodic snapshot failed");
                }
            }
        })
    };
    let result = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await;
    housekeeping.abort();
    match state.save_sessions() {
        Ok(true) => tracing::info!(sessions = state.store.session_count(), "session snapshot saved"),
        Ok(false) => {}
        Err(e) => tracing::error!(error = %e, "could not save session snapshot"),
    }
    result
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
