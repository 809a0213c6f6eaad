//! Session service for interactive subsurface mapping.
//!
//! Each session hides a layered scene. Clients dip at surface positions, the
//! service simulates the dip, classifies five nodes along it and composites
//! the cross-section map. A reveal call scores the map against the scene.
//! Payloads carry a top-level `"v"` schema version.

mod api;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::http::StatusCode;
use dipme_core::mapping::MapError;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

pub use api::router;
pub use session::{DipOutcome, Engine, Session};

/// Schema version of every request and response body.
pub const SCHEMA_VERSION: u32 = 1;

/// Time a real probe needs to collect one 128-sample window at 100 Hz.
pub const REAL_TIME_SAMPLING: Duration = Duration::from_millis(1280);

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("{0}")]
    OutOfBounds(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("pipeline failure: {0}")]
    Pipeline(#[from] MapError),
    #[error("persistence: {0}")]
    Persist(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::OutOfBounds(_) | ServiceError::BadRequest(_) | ServiceError::BadCheckpoint(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Pipeline(MapError::InvalidScene(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Pipeline(_) | ServiceError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Simulated acquisition time per dip; zero answers at once.
    pub sampling_delay: Duration,
    /// Sessions are loaded from and flushed to this file.
    pub persist_path: Option<PathBuf>,
    /// Trace frames pushed over the stream per dip.
    pub trace_frames: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            sampling_delay: REAL_TIME_SAMPLING,
            persist_path: None,
            trace_frames: 8,
        }
    }
}

/// A session behind its own lock, plus the channel its stream listens on.
pub struct SessionSlot {
    pub session: Mutex<Session>,
    pub model: Arc<dipme_core::Checkpoint>,
    pub stream: broadcast::Sender<String>,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub engine: Engine,
    pub model: Arc<dipme_core::Checkpoint>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    started: std::time::Instant,
}

#[derive(Serialize, Deserialize)]
struct PersistFile {
    v: u32,
    sessions: Vec<Session>,
}

impl AppState {
    pub fn new(model: dipme_core::Checkpoint, engine: Engine, config: ServiceConfig) -> Self {
        Self {
            config,
            engine,
            model: Arc::new(model),
            sessions: RwLock::new(HashMap::new()),
            started: std::time::Instant::now(),
        }
    }

    /// Builds the state and restores sessions from the persistence file if
    /// it exists.
    pub fn restore(model: dipme_core::Checkpoint, engine: Engine, config: ServiceConfig) -> Result<Self, ServiceError> {
        let state = Self::new(model, engine, config);
        if let Some(path) = state.config.persist_path.clone().filter(|p| p.exists()) {
            let text = std::fs::read_to_string(&path).map_err(|e| ServiceError::Persist(format!("{}: {e}", path.display())))?;
            let file: PersistFile = serde_json::from_str(&text).map_err(|e| ServiceError::Persist(e.to_string()))?;
            if file.v != SCHEMA_VERSION {
                return Err(ServiceError::Persist(format!("file schema v{}, expected v{SCHEMA_VERSION}", file.v)));
            }
            for s in file.sessions {
                let model = match &s.checkpoint {
                    Some(p) => Arc::new(load_checkpoint(Path::new(p))?),
                    None => state.model.clone(),
                };
                state.insert(s, model);
            }
            tracing::info!(path = %path.display(), sessions = state.len(), "sessions restored");
        }
        Ok(state)
    }

    pub fn elapsed_s(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, session: Session, model: Arc<dipme_core::Checkpoint>) -> Arc<SessionSlot> {
        let (tx, _) = broadcast::channel(256);
        let id = session.id.clone();
        let slot = Arc::new(SessionSlot {
            session: Mutex::new(session),
            model,
            stream: tx,
        });
        self.sessions.write().expect("session table poisoned").insert(id, slot.clone());
        slot
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionSlot>, ServiceError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Writes every session to the persistence file, if one is configured.
    pub async fn flush(&self) -> Result<(), ServiceError> {
        let Some(path) = &self.config.persist_path else {
            return Ok(());
        };
        let slots: Vec<Arc<SessionSlot>> = self.sessions.read().expect("session table poisoned").values().cloned().collect();
        let mut sessions = Vec::with_capacity(slots.len());
        for slot in slots {
            sessions.push(slot.session.lock().await.clone());
        }
        sessions.sort_by(|a, b| a.id.cmp(&b.id));
        let file = PersistFile {
            v: SCHEMA_VERSION,
            sessions,
        };
        let text = serde_json::to_string(&file).map_err(|e| ServiceError::Persist(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| ServiceError::Persist(format!("{}: {e}", path.display())))?;
        tracing::info!(path = %path.display(), sessions = file.sessions.len(), "sessions flushed");
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<dipme_core::Checkpoint, ServiceError> {
    let ck = dipme_core::Checkpoint::load(path).map_err(|e| ServiceError::BadCheckpoint(format!("{}: {e}", path.display())))?;
    ck.params.validate().map_err(|e| ServiceError::BadCheckpoint(e.to_string()))?;
    Ok(ck)
}

/// Serves until `shutdown` resolves, then flushes sessions.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    if let Err(e) = state.flush().await {
        tracing::error!(error = %e, "flush on shutdown failed");
    }
    Ok(())
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
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
    tracing::info!("shutdown requested");
}
