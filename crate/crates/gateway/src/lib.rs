//! Local HTTP service wrapping one editing session for the browser UI.
//!
//! | Method | Path | Reply |
//! |---|---|---|
//! | GET | `/api/state` | session snapshot |
//! | POST | `/api/load` | multipart part `file`; state, or 422 |
//! | POST | `/api/endpoint` | `{"url"}`; card, or an error payload |
//! | POST | `/api/process` | `{"controls"}`; 202, 409 or 422 |
//! | GET | `/api/progress` | `{"state","progress","message"}` |
//! | POST | `/api/cancel`, `/api/undo`, `/api/redo` | state |
//! | GET | `/api/media` | WAV (float) or SMF bytes |
//! | GET | `/api/waveform?bins=N` | min/max bins, audio only |
//! | GET | `/api/notes` | piano-roll notes, MIDI only |
//! | GET | `/api/preview` | sine rendering of a MIDI document |
//! | GET | `/api/debug` | history depths and the last error in full |
//!
//! Errors are `{"code","message"}`. A second process request while one is
//! running gets 409 with code `busy`.

mod registry;
mod routes;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tokio::sync::oneshot;
use tower_http::services::ServeDir;

use harp_core::protocol::{CARD_TIMEOUT, PROCESS_BUDGET};

pub use registry::{load_registry, parse_registry, RegistryEntry, RegistryError};
pub use routes::PREVIEW_SAMPLE_RATE;

pub const DEFAULT_PORT: u16 = 8787;
pub const PORT_ENV: &str = "HARP_GATEWAY_PORT";
pub const REGISTRY_ENV: &str = "HARP_REGISTRY";

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// 0 picks a free port.
    pub port: u16,
    pub registry_path: Option<PathBuf>,
    /// Static UI assets served at `/`.
    pub ui_dir: Option<PathBuf>,
    pub request_timeout: Duration,
    pub process_timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            port: DEFAULT_PORT,
            registry_path: None,
            ui_dir: None,
            request_timeout: CARD_TIMEOUT,
            process_timeout: PROCESS_BUDGET,
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `HARP_GATEWAY_PORT` and `HARP_REGISTRY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut config = GatewayConfig::default();
        if let Ok(port) = std::env::var(PORT_ENV) {
            config.port = port
                .trim()
                .parse()
                .map_err(|_| GatewayError::Config(format!("{PORT_ENV}={port:?} is not a port number")))?;
        }
        if let Some(path) = std::env::var_os(REGISTRY_ENV) {
            config.registry_path = Some(PathBuf::from(path));
        }
        Ok(config)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{0}")]
    Config(String),
    #[error("starting gateway: {0}")]
    Io(#[from] io::Error),
}

/// Handle to a running gateway. Dropping it stops the server.
pub struct GatewayServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl GatewayServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server exits on its own.
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts the gateway on `127.0.0.1` on its own thread.
pub fn serve_gateway(config: GatewayConfig) -> Result<GatewayServer, GatewayError> {
    let registry = match &config.registry_path {
        Some(path) => load_registry(path)?,
        None => Vec::new(),
    };
    if let Some(dir) = &config.ui_dir {
        if !dir.is_dir() {
            return Err(GatewayError::Config(format!("UI directory {} does not exist", dir.display())));
        }
    }

    let listener = std::net::TcpListener::bind(("127.0.0.1", config.port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

    let state = Arc::new(routes::AppState::new(
        registry,
        config.request_timeout,
        config.process_timeout,
    ));
    let app = routes::api_router(state);
    let app = match &config.ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => routes::with_placeholder(app),
    };

    let thread = std::thread::Builder::new()
        .name("harp-gateway".to_string())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("gateway: {e}");
                        return;
                    }
                };
                let served = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await;
                if let Err(e) = served {
                    log::error!("gateway: {e}");
                }
            });
        })?;

    Ok(GatewayServer {
        addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
