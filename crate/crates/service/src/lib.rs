//! HTTP front for live elicitation sessions, preference retrieval and
//! oracle-mask enhancement of uploaded audio.
//!
//! Sessions live in memory behind per-session locks; every accepted
//! mutation is appended to a JSON-lines journal (fsync per line) that is
//! replayed on startup.

mod routes;
mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::Router;
use prefse_core::mtlnet::{ModelWeights, MtlError};
use prefse_core::scenes::{DatasetManifest, SceneError};
use prefse_core::signal::StftParams;
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub use routes::{PlanSummary, ResponseBody, SessionConfig, SessionCreated, SessionState};
pub use store::{JournalEntry, SessionEntry, SessionStore, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] MtlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read-only inputs shared by every request.
pub struct Artifacts {
    pub manifest: DatasetManifest,
    /// Directory that file-backed records resolve against.
    pub base_dir: Option<PathBuf>,
    pub weights: Option<ModelWeights>,
    pub stft: StftParams,
}

impl Artifacts {
    pub fn new(manifest: DatasetManifest, weights: Option<ModelWeights>) -> Self {
        Self { manifest, base_dir: None, weights, stft: StftParams::default() }
    }

    /// Loads a manifest and optional weights; records resolve against the
    /// manifest's directory.
    pub fn load(manifest_path: &Path, weights_path: Option<&Path>) -> Result<Self, ServiceError> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let weights = weights_path.map(ModelWeights::load).transpose()?;
        Ok(Self {
            manifest,
            base_dir: manifest_path.parent().map(Path::to_path_buf),
            weights,
            stft: StftParams::default(),
        })
    }
}

#[derive(Clone)]
pub struct AppState {
    pub artifacts: Option<Arc<Artifacts>>,
    pub store: Arc<SessionStore>,
    /// Expose scene and SNR in stimulus metadata during elicitation.
    pub reveal: bool,
}

impl AppState {
    pub fn new(artifacts: Option<Artifacts>, store: SessionStore, reveal: bool) -> Self {
        Self { artifacts: artifacts.map(Arc::new), store: Arc::new(store), reveal }
    }
}

pub fn router(state: AppState) -> Router {
    routes::routes().with_state(state).layer(CorsLayer::permissive())
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub manifest: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub journal: PathBuf,
    pub reveal: bool,
}

/// Loads artifacts, replays the journal and serves until Ctrl-C.
pub async fn serve(config: ServeConfig) -> Result<(), ServiceError> {
    let artifacts = match &config.manifest {
        Some(m) => Some(Artifacts::load(m, config.weights.as_deref())?),
        None => None,
    };
    let store = SessionStore::open(&config.journal)?;
    log::info!("replayed {} session(s) from {}", store.ids().len(), config.journal.display());
    let app = router(AppState::new(artifacts, store, config.reveal));
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
