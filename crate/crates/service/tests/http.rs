//! Endpoint-level tests driven through the router without a socket.

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

use screeneval::bootstrap::BootstrapConfig;
use screeneval::calibration::{CalibrationArtifact, Level};
use screeneval::dataset::{Dataset, Split};
use screeneval::metrics::{ConfusionMatrix, ThresholdMode};
use screeneval::report::build_performance_report;
use screeneval::simulate::records_from_counts;
use screeneval::voting::VoteStrategy;
use screeneval_service::{router, ScreenResponse, ServiceConfig, REQUEST_PROVENANCE};

fn artifact(level: Level, strategy: Option<VoteStrategy>, threshold: f64) -> CalibrationArtifact {
    CalibrationArtifact {
        threshold,
        achieved_f1: 0.8,
        level,
        strategy,
        validation_counts: ConfusionMatrix::new(1, 0, 0, 1),
        created_from: "test".to_string(),
    }
}

fn test_router() -> axum::Router {
    router(ServiceConfig::new(vec![
        artifact(Level::Image, None, 0.5),
        artifact(Level::Subject, Some(VoteStrategy::Max), 0.5),
        artifact(Level::Subject, Some(VoteStrategy::Mean), 0.6),
    ]))
}

async fn send(router: axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let response = router.oneshot(req).await.unwrap();
    let status = response.status();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

fn json_request(uri: &str, body: &str) -> Request<Body> {
    Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn health_returns_ok() {
    let req = Request::builder().uri("/v1/health").body(Body::empty()).unwrap();
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert!(v["version"].is_string());
}

#[tokio::test]
async fn health_head_request_has_empty_body() {
    let req = Request::builder()
        .method(Method::HEAD)
        .uri("/v1/health")
        .body(Body::empty())
        .unwrap();
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.is_empty());
}

#[tokio::test]
async fn health_ignores_request_bodies() {
    let req = Request::builder()
        .uri("/v1/health")
        .body(Body::from("ignored payload"))
        .unwrap();
    let (status, _) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn screen_max_voting_positive() {
    let req = json_request(
        "/v1/screen",
        r#"{"subject_id":"s1","scores":[0.2,0.9,0.4],"strategy":"max"}"#,
    );
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::OK);
    let resp: ScreenResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.subject_score, 0.9);
    assert_eq!(resp.decision, "positive");
    assert_eq!(resp.threshold, 0.5);
    assert_eq!(resp.strategy, "max");
}

#[tokio::test]
async fn screen_mean_voting_below_threshold_is_negative() {
    let req = json_request(
        "/v1/screen",
        r#"{"subject_id":"s1","scores":[0.2,0.9,0.4],"strategy":"mean"}"#,
    );
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::OK);
    let resp: ScreenResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.subject_score, 0.5);
    assert_eq!(resp.decision, "negative");
    assert_eq!(resp.threshold, 0.6);
}

#[tokio::test]
async fn screen_empty_scores_is_400() {
    let req = json_request("/v1/screen", r#"{"subject_id":"s1","scores":[],"strategy":"max"}"#);
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "no_scores");
    assert_eq!(v["message"], "no scores for subject");
}

#[tokio::test]
async fn screen_score_out_of_range_is_400() {
    let req = json_request(
        "/v1/screen",
        r#"{"subject_id":"s1","scores":[0.2,1.4],"strategy":"max"}"#,
    );
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "score_out_of_range");
}

#[tokio::test]
async fn screen_unknown_strategy_is_400() {
    let req = json_request(
        "/v1/screen",
        r#"{"subject_id":"s1","scores":[0.2],"strategy":"median"}"#,
    );
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "unknown_strategy");
}

#[tokio::test]
async fn screen_without_matching_artifact_is_400() {
    let router = router(ServiceConfig::new(vec![artifact(Level::Image, None, 0.5)]));
    let req = json_request(
        "/v1/screen",
        r#"{"subject_id":"s1","scores":[0.2],"strategy":"max"}"#,
    );
    let (status, body) = send(router, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "missing_artifact");
}

#[tokio::test]
async fn malformed_json_is_400() {
    let req = json_request("/v1/screen", "{not json");
    let (status, body) = send(test_router(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "bad_request_body");
}

fn evaluate_fixture() -> Dataset {
    let counts = ConfusionMatrix::new(210, 92, 175, 1662);
    let records = records_from_counts("Pooled", Split::Test, &counts, 0.5).unwrap();
    Dataset::new(records, REQUEST_PROVENANCE)
}

#[tokio::test]
async fn evaluate_matches_library_bytes() {
    let data = evaluate_fixture();
    let body = format!(
        r#"{{"records":{},"options":{{"replicates":40,"seed":7}}}}"#,
        serde_json::to_string(&data.records).unwrap()
    );
    let (status, response_bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::OK);

    let artifacts = vec![
        artifact(Level::Image, None, 0.5),
        artifact(Level::Subject, Some(VoteStrategy::Max), 0.5),
        artifact(Level::Subject, Some(VoteStrategy::Mean), 0.6),
    ];
    let cfg = BootstrapConfig { replicates: 40, seed: 7, ..Default::default() };
    let expected = build_performance_report(&data, &artifacts, &cfg, ThresholdMode::Ge)
        .unwrap()
        .to_json_bytes();
    assert_eq!(response_bytes, expected);
}

#[tokio::test]
async fn evaluate_accepts_bare_record_arrays() {
    let data = evaluate_fixture();
    let body = serde_json::to_string(&data.records).unwrap();
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["provenance"], REQUEST_PROVENANCE);
    let total_image = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["scope"] == "Total" && r["level"] == "image")
        .unwrap();
    let sensitivity = total_image["metrics"]["sensitivity"]["point"].as_f64().unwrap();
    assert!((sensitivity - 0.695).abs() <= 0.002);
}

#[tokio::test]
async fn evaluate_rejects_invalid_dataset_with_report() {
    let mut data = evaluate_fixture();
    data.records[0].score = 1.5;
    let body = serde_json::to_string(&data.records).unwrap();
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "validation_failed");
    assert!(v["violations"]["violations"][0]["message"]
        .as_str()
        .unwrap()
        .contains("score out of [0,1]"));
}

#[tokio::test]
async fn evaluate_enforces_replicates_cap() {
    let data = evaluate_fixture();
    let body = format!(
        r#"{{"records":{},"options":{{"replicates":20000}}}}"#,
        serde_json::to_string(&data.records).unwrap()
    );
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "replicates_cap_exceeded");
}

#[tokio::test]
async fn evaluate_empty_records_is_400() {
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", "[]")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "no_records");
}

#[tokio::test]
async fn evaluate_can_select_artifacts_by_key() {
    let data = evaluate_fixture();
    let body = format!(
        r#"{{"records":{},"options":{{"replicates":20,"artifacts":["subject_max"]}}}}"#,
        serde_json::to_string(&data.records).unwrap()
    );
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert!(rows.iter().all(|r| r["level"] == "subject" && r["strategy"] == "max"));
    assert_eq!(v["thresholds"].as_object().unwrap().len(), 1);

    let body = format!(
        r#"{{"records":{},"options":{{"artifacts":["subject_median"]}}}}"#,
        serde_json::to_string(&data.records).unwrap()
    );
    let (status, bytes) = send(test_router(), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "unknown_artifact");
}

#[tokio::test]
async fn oversized_bodies_are_rejected() {
    let config = ServiceConfig {
        max_body_bytes: 1024,
        ..ServiceConfig::new(vec![artifact(Level::Image, None, 0.5)])
    };
    let data = evaluate_fixture();
    let body = serde_json::to_string(&data.records).unwrap();
    assert!(body.len() > 1024);
    let (status, bytes) = send(router(config), json_request("/v1/evaluate", &body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "bad_request_body");
    assert!(v["message"].as_str().unwrap().to_lowercase().contains("length limit"));
}

#[tokio::test]
async fn concurrent_identical_requests_get_identical_bodies() {
    let data = evaluate_fixture();
    let body = format!(
        r#"{{"records":{},"options":{{"replicates":30,"seed":3}}}}"#,
        serde_json::to_string(&data.records).unwrap()
    );
    let router = test_router();
    let (a, b) = tokio::join!(
        send(router.clone(), json_request("/v1/evaluate", &body)),
        send(router.clone(), json_request("/v1/evaluate", &body)),
    );
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
}
