//! Request and response bodies plus the handlers behind them.
//!
//! Rasters travel as base64 WGF1 blobs and renders as base64 PNG. Inference
//! time is reported in the `x-inference-ms` header so that identical
//! requests yield byte-identical bodies.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderName, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use windflow_core::comfort::{comfort_map, predict_direction, sector_index, ComfortCriteria, LegendEntry, Provenance, WindRose, SECTORS, TRAINING_SECTOR};
use windflow_core::predict::Predictor;
use windflow_core::raster::{decode_wgf, encode_wgf, rasterize, ChannelTag, FieldGrid, Scene};
use windflow_core::render::viridis_png;

use crate::error::ServeError;
use crate::registry::{ModelInfo, ModelRegistry};

pub const INFERENCE_HEADER: &str = "x-inference-ms";

pub struct AppState {
    pub registry: ModelRegistry,
    pub max_size: usize,
    pub timeout: Duration,
    pub started: Instant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub models: Vec<String>,
    pub model_info: Vec<ModelInfo>,
    pub uptime_s: f64,
}

/// A compass sector given by index (0 = N, clockwise) or name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SectorRef {
    Index(i64),
    Name(String),
}

impl SectorRef {
    fn resolve(&self) -> Result<usize, ServeError> {
        match self {
            Self::Index(i) if (0..8).contains(i) => Ok(*i as usize),
            Self::Index(i) => Err(ServeError::Unprocessable(format!("sector {i} outside 0..8"))),
            Self::Name(n) => sector_index(n).map_err(ServeError::from),
        }
    }
}

/// Geometry as a vector scene or a base64 WGF1 raster; exactly one is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryInput {
    #[serde(default)]
    pub scene: Option<Scene>,
    #[serde(default)]
    pub geometry: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub model: String,
    #[serde(flatten)]
    pub input: GeometryInput,
    /// Defaults to the training direction, W.
    #[serde(default)]
    pub direction_sector: Option<SectorRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: String,
    pub spec_hash: String,
    pub direction_sector: usize,
    pub sector: String,
    pub height: usize,
    pub width: usize,
    pub units: String,
    /// Speed raster, base64 WGF1 with one flow channel.
    pub flow: String,
    /// Viridis render scaled to `[0, v_max]`, base64 PNG.
    pub png: String,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortRequest {
    pub model: String,
    #[serde(flatten)]
    pub input: GeometryInput,
    pub windrose: WindRose,
    #[serde(default)]
    pub criteria: Option<ComfortCriteria>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortResponse {
    pub model: String,
    pub spec_hash: String,
    pub height: usize,
    pub width: usize,
    /// Class per pixel, row-major; 255 marks no data.
    pub classes: Vec<u8>,
    pub histogram: Vec<usize>,
    pub no_data: usize,
    pub legend: Vec<LegendEntry>,
    pub provenance: Option<Provenance>,
    /// Base64 PNG in the legend colours.
    pub png: String,
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServeError> {
    serde_json::from_slice(body).map_err(|e| ServeError::BadRequest(e.to_string()))
}

fn check_size(h: usize, w: usize, max: usize) -> Result<(), ServeError> {
    if h > max || w > max {
        return Err(ServeError::TooLarge { height: h, width: w, max });
    }
    Ok(())
}

/// The raw geometry raster a request describes, in the model's channel layout.
fn geometry_for(input: &GeometryInput, p: &Predictor, max_size: usize) -> Result<FieldGrid, ServeError> {
    let norm = &p.normalization;
    match (&input.scene, &input.geometry) {
        (Some(scene), None) => {
            check_size(norm.size, norm.size, max_size)?;
            let with_height = norm.geometry_channels.contains(&ChannelTag::Height);
            if (scene.extent - norm.extent_m as f64).abs() > 1e-6 * norm.extent_m as f64 {
                log::warn!("scene extent {} m differs from the model's {} m", scene.extent, norm.extent_m);
            }
            Ok(rasterize(scene, norm.size, with_height)?)
        }
        (None, Some(blob)) => {
            let bytes = B64.decode(blob).map_err(|e| ServeError::BadRequest(format!("geometry is not base64: {e}")))?;
            let rec = decode_wgf(&bytes)?;
            check_size(rec.height, rec.width, max_size)?;
            if rec.geometry_channels != norm.geometry_channels.len() {
                return Err(ServeError::Unprocessable(format!(
                    "geometry has {} channels, model expects {:?}",
                    rec.geometry_channels, norm.geometry_channels
                )));
            }
            Ok(FieldGrid::from_data(rec.height, rec.width, norm.geometry_channels.clone(), rec.geometry, norm.extent_m)?)
        }
        _ => Err(ServeError::BadRequest("give exactly one of 'scene' or 'geometry'".into())),
    }
}

/// Run blocking inference under the request timeout, timing it.
async fn run_blocking<T: Send + 'static>(
    state: &AppState,
    job: impl FnOnce() -> Result<T, ServeError> + Send + 'static,
) -> Result<(T, f64), ServeError> {
    let t0 = Instant::now();
    let handle = tokio::task::spawn_blocking(job);
    let out = tokio::time::timeout(state.timeout, handle)
        .await
        .map_err(|_| ServeError::Timeout(state.timeout.as_secs()))?
        .map_err(|e| ServeError::Internal(format!("inference task failed: {e}")))??;
    Ok((out, t0.elapsed().as_secs_f64() * 1e3))
}

fn with_timing(body: impl IntoResponse, ms: f64) -> Response {
    let mut resp = body.into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("{ms:.1}")) {
        resp.headers_mut().insert(HeaderName::from_static(INFERENCE_HEADER), v);
    }
    resp
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        models: state.registry.names(),
        model_info: state.registry.info(),
        uptime_s: state.started.elapsed().as_secs_f64(),
    })
}

pub async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServeError> {
    let req: PredictRequest = parse(&body)?;
    let p = state.registry.get(&req.model)?;
    let sector = req.direction_sector.as_ref().map_or(Ok(TRAINING_SECTOR), SectorRef::resolve)?;
    let geometry = geometry_for(&req.input, &p, state.max_size)?;
    let job_p = p.clone();
    let (flow, ms) = run_blocking(&state, move || Ok(predict_direction(&job_p, &geometry, sector)?)).await?;
    let v_max = p.normalization.v_max;
    let png = viridis_png(flow.data(), flow.height(), flow.width(), 0.0, v_max)?;
    let resp = PredictResponse {
        model: req.model,
        spec_hash: p.spec_hash.clone(),
        direction_sector: sector,
        sector: SECTORS[sector].to_string(),
        height: flow.height(),
        width: flow.width(),
        units: "m/s".into(),
        flow: B64.encode(encode_wgf(None, Some(&flow))?),
        png: B64.encode(png),
        v_max,
    };
    log::info!("predict {} sector {} in {ms:.0} ms", resp.model, resp.sector);
    Ok(with_timing(Json(resp), ms))
}

pub async fn comfort(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServeError> {
    let req: ComfortRequest = parse(&body)?;
    let p = state.registry.get(&req.model)?;
    let geometry = geometry_for(&req.input, &p, state.max_size)?;
    let criteria = req.criteria.unwrap_or_default();
    let rose = req.windrose;
    let job_p = p.clone();
    let (map, ms) = run_blocking(&state, move || Ok(comfort_map(&job_p, &geometry, &rose, &criteria)?)).await?;
    let resp = ComfortResponse {
        model: req.model,
        spec_hash: p.spec_hash.clone(),
        height: map.height,
        width: map.width,
        histogram: map.histogram(),
        no_data: map.no_data(),
        png: B64.encode(map.to_png()?),
        legend: map.legend,
        provenance: map.provenance,
        classes: map.classes,
    };
    log::info!("comfort {} in {ms:.0} ms", resp.model);
    Ok(with_timing(Json(resp), ms))
}
