//! Trace-event ingest: an append-only session store and the HTTP service
//! in front of it.

pub mod config;
pub mod service;
pub mod store;

use std::future::Future;
use std::sync::Arc;

use tokio::net::TcpListener;

pub use config::ServiceConfig;
pub use service::{handle_ingest, router, IngestReceipt, Rejected};
pub use store::{Store, StoreError};

/// Serves `store` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
}
