//! Tiny server-spawning helpers shared by the CLI and the test harnesses.

use std::net::SocketAddr;

use axum::Router;
use tokio::task::JoinHandle;

/// Bind and serve in a background task; returns the bound address (useful
/// with port 0) and the task handle.
pub async fn spawn_router(
    addr: SocketAddr,
    router: Router,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!("server on {local} exited: {e}");
        }
    });
    Ok((local, handle))
}

/// Serve in the foreground until interrupted.
pub async fn serve_blocking(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
}
