//! HTTP service for flow predictions and comfort maps.
//!
//! Endpoints: `GET /health`, `POST /predict`, `POST /comfort`. Checkpoints
//! are loaded once at startup and shared read-only between handlers.

mod api;
mod config;
mod error;
mod registry;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

pub use api::{
    AppState, ComfortRequest, ComfortResponse, GeometryInput, HealthResponse, PredictRequest, PredictResponse, SectorRef,
    INFERENCE_HEADER,
};
pub use config::{ServiceConfig, CONFIG_ENV, MIN_MAX_SIZE};
pub use error::ServeError;
pub use registry::{ModelInfo, ModelRegistry};

pub fn router(state: Arc<AppState>, body_limit: usize) -> Router {
    Router::new()
        .route("/health", get(api::health))
        .route("/predict", post(api::predict))
        .route("/comfort", post(api::comfort))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

pub fn app(cfg: &ServiceConfig, registry: ModelRegistry) -> Router {
    let state = AppState {
        registry,
        max_size: cfg.max_size,
        timeout: Duration::from_secs(cfg.timeout_s),
        started: Instant::now(),
    };
    router(Arc::new(state), cfg.body_limit())
}

/// Load every checkpoint and bind the listener.
pub async fn bind(cfg: &ServiceConfig) -> Result<(TcpListener, Router), ServeError> {
    cfg.validate()?;
    let registry = ModelRegistry::load(cfg)?;
    let listener = TcpListener::bind(&cfg.bind).await?;
    Ok((listener, app(cfg, registry)))
}

/// Serve until `shutdown` resolves.
pub async fn serve_until(listener: TcpListener, app: Router, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Bind and serve until Ctrl-C.
pub async fn run(cfg: &ServiceConfig) -> Result<SocketAddr, ServeError> {
    let (listener, app) = bind(cfg).await?;
    let addr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    serve_until(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(addr)
}
