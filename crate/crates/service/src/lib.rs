//! Stateless HTTP interface exposing per-subject screening and dataset
//! evaluation.
//!
//! Endpoints (HTTP/1.1, JSON bodies):
//! - `GET /v1/health` — liveness probe.
//! - `POST /v1/screen` — scores in, vote + threshold decision out.
//! - `POST /v1/evaluate` — dataset in, performance report out; the response
//!   bytes are identical to the library's report encoding for the same
//!   inputs and seed.
//!
//! The service holds no mutable state: calibration artifacts and caps are
//! loaded at startup and shared immutably, so identical requests get
//! identical responses regardless of ordering or concurrency.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use screeneval::bootstrap::{BootstrapConfig, ResampleUnit};
use screeneval::calibration::{CalibrationArtifact, Level};
use screeneval::dataset::{Dataset, PredictionRecord};
use screeneval::metrics::ThresholdMode;
use screeneval::report::build_performance_report;
use screeneval::voting::{vote, VoteStrategy};

/// Provenance stamped on datasets posted to `/v1/evaluate`; callers checking
/// byte parity against the library must use the same string.
pub const REQUEST_PROVENANCE: &str = "evaluate request";

pub const DEFAULT_MAX_BODY_BYTES: usize = 32 * 1024 * 1024;
pub const DEFAULT_MAX_REPLICATES: u32 = 10_000;

/// Immutable startup configuration shared by all requests.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub artifacts: Vec<CalibrationArtifact>,
    pub mode: ThresholdMode,
    pub max_body_bytes: usize,
    pub max_replicates: u32,
}

impl ServiceConfig {
    pub fn new(artifacts: Vec<CalibrationArtifact>) -> ServiceConfig {
        ServiceConfig {
            artifacts,
            mode: ThresholdMode::Ge,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            max_replicates: DEFAULT_MAX_REPLICATES,
        }
    }
}

pub fn router(config: ServiceConfig) -> Router {
    let max_body = config.max_body_bytes;
    Router::new()
        .route("/v1/health", get(handle_health))
        .route("/v1/screen", post(handle_screen))
        .route("/v1/evaluate", post(handle_evaluate))
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(Arc::new(config))
}

/// Binds `addr` and serves until the task is cancelled.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(config, listener).await
}

/// Serves on an already-bound listener (lets callers report the resolved
/// address before handing over).
pub async fn serve_on(
    config: ServiceConfig,
    listener: tokio::net::TcpListener,
) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<serde_json::Value>,
}

fn bad_request(error: &'static str, message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(ErrorBody { error, message: message.into(), violations: None }),
    )
        .into_response()
}

fn rejection_to_response(rejection: JsonRejection) -> Response {
    bad_request("bad_request_body", rejection.body_text())
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

async fn handle_health() -> Json<Health> {
    Json(Health { status: "ok", version: env!("CARGO_PKG_VERSION") })
}

#[derive(Debug, Deserialize)]
pub struct ScreenRequest {
    pub subject_id: String,
    pub scores: Vec<f64>,
    pub strategy: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScreenResponse {
    pub subject_id: String,
    pub subject_score: f64,
    pub decision: String,
    pub threshold: f64,
    pub strategy: String,
}

async fn handle_screen(
    State(config): State<Arc<ServiceConfig>>,
    payload: Result<Json<ScreenRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match payload {
        Ok(json) => json,
        Err(rejection) => return rejection_to_response(rejection),
    };
    let strategy: VoteStrategy = match req.strategy.parse() {
        Ok(s) => s,
        Err(e) => return bad_request("unknown_strategy", e.to_string()),
    };
    if req.scores.is_empty() {
        return bad_request("no_scores", "no scores for subject");
    }
    if let Some(bad) = req.scores.iter().find(|s| !(s.is_finite() && (0.0..=1.0).contains(*s))) {
        return bad_request("score_out_of_range", format!("score out of [0,1]: {bad}"));
    }
    let artifact = config
        .artifacts
        .iter()
        .find(|a| a.level == Level::Subject && a.strategy == Some(strategy));
    let Some(artifact) = artifact else {
        return bad_request(
            "missing_artifact",
            format!("no calibration artifact loaded for level `subject` strategy `{strategy}`"),
        );
    };
    let subject_score = vote(&req.scores, strategy).expect("scores checked non-empty");
    let positive = config.mode.is_positive(subject_score, artifact.threshold);
    Json(ScreenResponse {
        subject_id: req.subject_id,
        subject_score,
        decision: if positive { "positive" } else { "negative" }.to_string(),
        threshold: artifact.threshold,
        strategy: strategy.as_str().to_string(),
    })
    .into_response()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateOptions {
    pub replicates: Option<u32>,
    pub seed: Option<u64>,
    pub confidence: Option<f64>,
    pub unit: Option<ResampleUnit>,
    pub threshold_mode: Option<ThresholdMode>,
    /// Restrict the report to these loaded artifacts, by key
    /// (`image`, `subject_max`, `subject_mean`). All loaded when omitted.
    pub artifacts: Option<Vec<String>>,
}

/// `/v1/evaluate` accepts either the bare dataset JSON schema (an array of
/// records) or a `{records, options}` wrapper.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum EvaluateBody {
    Records(Vec<PredictionRecord>),
    Wrapped {
        records: Vec<PredictionRecord>,
        #[serde(default)]
        options: EvaluateOptions,
    },
}

async fn handle_evaluate(
    State(config): State<Arc<ServiceConfig>>,
    payload: Result<Json<EvaluateBody>, JsonRejection>,
) -> Response {
    let Json(body) = match payload {
        Ok(json) => json,
        Err(rejection) => return rejection_to_response(rejection),
    };
    let (records, options) = match body {
        EvaluateBody::Records(records) => (records, EvaluateOptions::default()),
        EvaluateBody::Wrapped { records, options } => (records, options),
    };
    if records.is_empty() {
        return bad_request("no_records", "no records");
    }

    let dataset = Dataset::new(records, REQUEST_PROVENANCE);
    let report = dataset.validate();
    if !report.is_clean() {
        return (
            StatusCode::BAD_REQUEST,
            Json(ErrorBody {
                error: "validation_failed",
                message: format!("{} violation(s)", report.violations.len()),
                violations: Some(serde_json::to_value(&report).expect("report serializes")),
            }),
        )
            .into_response();
    }

    let cfg = BootstrapConfig {
        replicates: options.replicates.unwrap_or(1000),
        confidence: options.confidence.unwrap_or(0.95),
        seed: options.seed.unwrap_or(0),
        unit: options.unit.unwrap_or(ResampleUnit::Photo),
    };
    if cfg.replicates > config.max_replicates {
        return bad_request(
            "replicates_cap_exceeded",
            format!("replicates {} exceeds cap {}", cfg.replicates, config.max_replicates),
        );
    }
    let mode = options.threshold_mode.unwrap_or(config.mode);

    let artifacts: Vec<CalibrationArtifact> = match &options.artifacts {
        None => config.artifacts.clone(),
        Some(keys) => {
            let mut selected = Vec::with_capacity(keys.len());
            for key in keys {
                match config.artifacts.iter().find(|a| &a.key() == key) {
                    Some(a) => selected.push(a.clone()),
                    None => {
                        return bad_request(
                            "unknown_artifact",
                            format!("no loaded calibration artifact with key `{key}`"),
                        )
                    }
                }
            }
            selected
        }
    };

    match build_performance_report(&dataset, &artifacts, &cfg, mode) {
        Ok(report) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "application/json")],
            report.to_json_bytes(),
        )
            .into_response(),
        Err(e) => bad_request("evaluation_failed", e.to_string()),
    }
}
