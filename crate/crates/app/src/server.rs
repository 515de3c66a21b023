//! HTTP inference service.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lesionbench_core::detect::{box_argmax_classify, detect, DetectionOutcome, DetectorConfig, DetectorRegistry};
use lesionbench_core::metrics::topk_set;
use lesionbench_core::pipeline::TrainedModel;
use serde::{Deserialize, Serialize};

#[derive(Clone)]
pub struct DetectorHandle {
    pub registry: Arc<DetectorRegistry>,
    pub config: DetectorConfig,
}

#[derive(Clone)]
pub struct AppState {
    pub model: Option<Arc<TrainedModel>>,
    pub detector: Option<DetectorHandle>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkEntry {
    pub class_id: usize,
    pub class_name: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxResponse {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub topk: Vec<TopkEntry>,
    #[serde(rename = "box")]
    pub bbox: Option<BoxResponse>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model_loaded": state.model.is_some() }))
}

async fn models(State(state): State<AppState>) -> Json<serde_json::Value> {
    let ids: Vec<&str> = state.model.iter().map(|m| m.model_id.as_str()).collect();
    Json(serde_json::json!({ "models": ids }))
}

type Failure = (StatusCode, String);

fn run_predict(state: &AppState, bytes: &[u8]) -> Result<PredictResponse, Failure> {
    let model = state
        .model
        .as_ref()
        .ok_or((StatusCode::SERVICE_UNAVAILABLE, "no model loaded".to_string()))?;
    let img = image::load_from_memory(bytes)
        .map_err(|e| (StatusCode::BAD_REQUEST, format!("cannot decode image: {e}")))?
        .to_rgb8();
    let probs = model
        .predict_image(&img)
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let k = state.top_k.min(probs.len());
    let topk = topk_set(&probs, k)
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .into_iter()
        .map(|c| TopkEntry {
            class_id: c,
            class_name: model.class_names.get(c).cloned().unwrap_or_default(),
            prob: probs[c],
        })
        .collect();

    let bbox = match &state.detector {
        None => None,
        Some(handle) => {
            let dets = detect(&handle.registry, "request", &img, &handle.config)
                .map_err(|e| (StatusCode::BAD_GATEWAY, format!("detector failed: {e}")))?;
            match box_argmax_classify(&dets) {
                DetectionOutcome::Detected { class_id, confidence, box_index } => {
                    let b = dets.boxes[box_index].bbox;
                    Some(BoxResponse {
                        xmin: b.xmin,
                        ymin: b.ymin,
                        xmax: b.xmax,
                        ymax: b.ymax,
                        class_id,
                        score: confidence,
                    })
                }
                DetectionOutcome::NoDetection => None,
            }
        }
    };
    Ok(PredictResponse { topk, bbox })
}

async fn predict(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if state.model.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    }
    if let Some(ct) = headers.get(header::CONTENT_TYPE) {
        let ct = ct.to_str().unwrap_or_default();
        if !matches!(ct.split(';').next().map(str::trim), Some("image/png" | "image/jpeg" | "application/octet-stream")) {
            return error(StatusCode::BAD_REQUEST, format!("unsupported content type `{ct}`"));
        }
    }
    if body.is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty body");
    }
    match tokio::task::spawn_blocking(move || run_predict(&state, &body)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err((status, message))) => error(status, message),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr, max_body_bytes: usize) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, max_body_bytes)).await
}
