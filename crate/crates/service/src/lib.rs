//! HTTP inference service: one checkpoint loaded at startup, served read-only to
//! concurrent restore and degrade-preview requests.
//!
//! Images travel as [`WireImage`]: base64 of raw interleaved 8-bit pixels.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use cresmd::imaging::{degrade_seeded, Dimension};
use cresmd::model::{ForwardOptions, ModelError};
use cresmd::tensor::TensorError;
use cresmd::{DegradationSpec, Image, Model};

pub const DEFAULT_MAX_DIM: usize = 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Largest accepted width or height.
    pub max_dim: usize,
    pub cors: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_dim: DEFAULT_MAX_DIM,
            cors: true,
        }
    }
}

pub struct AppState {
    pub model: Model<f32>,
    /// SHA-256 of the checkpoint file.
    pub digest: String,
    pub config: ServiceConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: String,
}

impl WireImage {
    pub fn encode(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            pixels: B64.encode(img.to_u8_interleaved()),
        }
    }

    pub fn decode(&self, max_dim: usize) -> Result<Image, ApiError> {
        if !(self.channels == 1 || self.channels == 3) {
            return Err(ApiError::bad(format!("image.channels: must be 1 or 3, got {}", self.channels)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ApiError::bad("image: width and height must be positive"));
        }
        if self.width > max_dim || self.height > max_dim {
            return Err(ApiError::TooLarge(format!(
                "image {}x{} exceeds the {max_dim}-pixel limit per side",
                self.width, self.height
            )));
        }
        let raw = B64
            .decode(&self.pixels)
            .map_err(|e| ApiError::bad(format!("image.pixels: invalid base64: {e}")))?;
        let want = self.width * self.height * self.channels;
        if raw.len() != want {
            return Err(ApiError::bad(format!(
                "image.pixels: decoded {} bytes, expected width*height*channels = {want}",
                raw.len()
            )));
        }
        Image::from_u8_interleaved(self.channels, self.height, self.width, &raw)
            .map_err(|e| ApiError::bad(format!("image: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    TooLarge(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        Self::BadRequest(msg.into())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(TensorError::NonFinite { .. }) => Self::Internal(e.to_string()),
            ModelError::ConditionDim { expected, found } => {
                Self::bad(format!("z: expected {expected} values, found {found}"))
            }
            other => Self::bad(other.to_string()),
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreRequest {
    image: WireImage,
    z: Vec<f64>,
    /// Include the inference time in the body. Off by default so identical
    /// requests get identical bodies; the time is always in `x-inference-ms`.
    #[serde(default)]
    timing: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DegradeRequest {
    image: WireImage,
    #[serde(default)]
    blur: f64,
    #[serde(default)]
    noise: f64,
    #[serde(default)]
    jpeg: Option<u8>,
    #[serde(default)]
    seed: u64,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn healthz() -> &'static str {
    "ok"
}

fn dim_info(d: &Dimension) -> Value {
    let (lo, hi) = d.range();
    let mut v = json!({ "name": d.name(), "range": [lo, hi], "stride": d.stride() });
    if let Dimension::Jpeg { .. } = d {
        v["range"] = json!([cresmd::imaging::MAX_QUALITY, cresmd::imaging::MIN_QUALITY]);
        v["none"] = json!("condition 0 means no compression; quality q maps to (110 - q) / 100");
    }
    v
}

async fn model_info(State(st): State<Arc<AppState>>) -> Json<Value> {
    let m = &st.model;
    let pc = m.param_count();
    Json(json!({
        "dims": m.space.dims.iter().map(dim_info).collect::<Vec<_>>(),
        "arch": m.arch,
        "kind": if m.is_baseline() { "baseline" } else { "cresmd" },
        "params": { "base": pc.base, "condition": pc.condition },
        "checkpoint": st.digest,
        "max_dim": st.config.max_dim,
    }))
}

async fn restore(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: RestoreRequest = parse(&body)?;
    let n = st.model.arch.condition_dim;
    if req.z.len() != n {
        return Err(ApiError::bad(format!("z: expected {n} values, found {}", req.z.len())));
    }
    if let Some(v) = req.z.iter().find(|v| !v.is_finite()) {
        return Err(ApiError::bad(format!("z: value {v} is not finite")));
    }
    let img = req.image.decode(st.config.max_dim)?;
    let (h, w) = (img.height(), img.width());
    if h < cresmd::model::MIN_SIZE || w < cresmd::model::MIN_SIZE {
        return Err(ApiError::bad(format!("image: {w}x{h} is below the 8x8 minimum")));
    }
    if img.channels() != st.model.arch.image_channels {
        return Err(ApiError::bad(format!(
            "image.channels: model expects {}, got {}",
            st.model.arch.image_channels,
            img.channels()
        )));
    }
    let state = st.clone();
    let (out, ms) = blocking(move || {
        let start = Instant::now();
        let out = state.model.restore(&img, &req.z, ForwardOptions::default())?;
        Ok((out, start.elapsed().as_secs_f64() * 1e3))
    })
    .await?;
    let mut body = json!({ "image": WireImage::encode(&out) });
    if req.timing {
        body["ms"] = json!(ms);
    }
    let mut resp = Json(body).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("{ms:.3}")) {
        resp.headers_mut().insert("x-inference-ms", v);
    }
    Ok(resp)
}

async fn degrade(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: DegradeRequest = parse(&body)?;
    let img = req.image.decode(st.config.max_dim)?;
    let spec = DegradationSpec::new(req.blur, req.noise, req.jpeg);
    let out = blocking(move || degrade_seeded(&img, &spec, req.seed).map_err(|e| ApiError::bad(e.to_string()))).await?;
    Ok(Json(json!({ "image": WireImage::encode(&out) })))
}

pub fn router(state: AppState) -> Router {
    let max_dim = state.config.max_dim;
    let cors = state.config.cors;
    // base64 inflates 4/3; leave room for JSON framing
    let limit = max_dim * max_dim * 3 * 4 / 3 + (1 << 20);
    let app = Router::new()
        .route("/api/healthz", get(healthz))
        .route("/api/model/info", get(model_info))
        .route("/api/restore", post(restore))
        .route("/api/degrade", post(degrade))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(state));
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
