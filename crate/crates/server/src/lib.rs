//! HTTP/WebSocket facade over splatedit sessions.
//!
//! Every session owns one writer thread that runs training and applies edits
//! in arrival order. Reads (render, query, export, stream) use the latest
//! published snapshot and never block the writer.

mod api;
mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, RwLock};

use splatedit::priors::PriorBackends;

pub use api::{router, CreateSession, EditRequest, RenderRequest, TextQuery, BboxQuery};
pub use error::ApiError;
pub use session::{SessionState, StatusBody};

/// Largest render, per side.
pub const MAX_RENDER_SIDE: usize = 1024;
/// Training steps between published snapshots.
pub const SNAPSHOT_EVERY: usize = 10;

pub type PriorFactory = Arc<dyn Fn() -> PriorBackends + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<u64, Arc<session::Session>>>>,
    next_id: Arc<AtomicU64>,
    priors: PriorFactory,
}

impl AppState {
    /// Each session gets its own backend bundle from `priors`, since the mock
    /// denoiser is conditioned on the session image.
    pub fn new(priors: PriorFactory) -> Self {
        Self {
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            priors,
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(PriorBackends::mock))
    }
}

/// Serves until the listener fails.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
