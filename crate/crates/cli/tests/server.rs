mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use rrnn_cli::commands::SimulationExport;
use rrnn_cli::server::{router, COMPUTE_HEADER};
use rrnn_core::checkpoint::Checkpoint;
use rrnn_core::service::{InfoResponse, Scenario, ScenarioIndex, ServiceError, WhatIfRequest, WhatIfResponse, WhatIfService};
use serde::de::DeserializeOwned;
use tower::ServiceExt;

fn service(dir: &std::path::Path) -> Arc<WhatIfService> {
    let ckpt = Checkpoint::load(&checkpoint(dir)).unwrap();
    Arc::new(WhatIfService::from_checkpoint(&ckpt, 1.0 / 15.0).unwrap().with_scenarios(scenarios()).unwrap())
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[tokio::test]
async fn info_and_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path()));
    let (status, headers, body) = call(&app, Method::GET, "/info", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
    let info: InfoResponse = parse(&body);
    assert_eq!((info.t_obs, info.t_pred, info.num_types), (T_OBS, T_PRED, 2));
    assert_eq!(info.labels, ["agent", "robot"]);
    assert_eq!(info.model, "RRNN-Vel");

    let (_, _, body) = call(&app, Method::GET, "/scenarios", None).await;
    let index: ScenarioIndex = parse(&body);
    assert_eq!(index.scenarios.len(), 3);
    let (status, _, body) = call(&app, Method::GET, &format!("/scenarios/{}", index.scenarios[0].id), None).await;
    assert_eq!(status, StatusCode::OK);
    let s: Scenario = parse(&body);
    assert_eq!(s.robot_future.len(), T_PRED);
    assert!(s.prediction.is_some());

    let (status, _, body) = call(&app, Method::GET, "/scenarios/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let _: ServiceError = parse(&body);
    let (status, _, _) = call(&app, Method::GET, "/elsewhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, headers, _) = call(&app, Method::OPTIONS, "/predict", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(headers.contains_key(header::ACCESS_CONTROL_ALLOW_METHODS));
}

/// The realized robot future of a demo scenario gives the same prediction
/// over HTTP as the offline `simulate` export.
#[tokio::test]
async fn predict_matches_simulate_export() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let app = router(svc.clone());
    let scenario = svc.scenario("approach-00").unwrap().clone();
    let window = dir.path().join("w.json");
    std::fs::write(&window, serde_json::to_vec(&scenario).unwrap()).unwrap();
    let out = dir.path().join("sim");
    let ckpt = dir.path().join("model.ckpt");
    assert_eq!(rrnn(&["simulate", "--checkpoint", ckpt.to_str().unwrap(), "--window", window.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let export: SimulationExport = parse(&std::fs::read(out.join("candidate_000.json")).unwrap());

    let body = serde_json::to_vec(&scenario.request()).unwrap();
    let (status, headers, bytes) = call(&app, Method::POST, "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers[COMPUTE_HEADER].to_str().unwrap().parse::<f64>().unwrap() >= 0.0);
    let response: WhatIfResponse = parse(&bytes);
    let served = &response.candidates[0].agents;
    assert_eq!(served.len(), export.agents.len());
    assert!(!served.is_empty());
    let mut worst: f64 = 0.0;
    for (a, b) in served.iter().zip(&export.agents) {
        assert_eq!(a.id, b.id);
        for (p, q) in a.steps.iter().zip(&b.steps) {
            for (x, y) in [(p.mu_x, q.mu_x), (p.mu_y, q.mu_y), (p.sigma_x, q.sigma_x), (p.sigma_y, q.sigma_y), (p.rho, q.rho)] {
                worst = worst.max((x - y).abs());
            }
            assert!(p.sigma_x > 0.0 && p.sigma_y > 0.0 && p.rho.abs() < 1.0);
        }
    }
    assert!(worst < 1e-9, "served prediction differs from simulate by {worst}");
    assert_eq!(response.checkpoint_sha256, export.checkpoint_sha256);
    assert_eq!(&scenario.prediction.unwrap(), served);
}

#[tokio::test]
async fn fan_out_degenerate_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let app = router(svc.clone());
    let mut req: WhatIfRequest = svc.scenario("approach-01").unwrap().request();
    let last = *req.agents.iter().find(|a| a.controlled).unwrap().positions.last().unwrap();
    req.candidates.push(vec![last.unwrap(); T_PRED]);
    let body = serde_json::to_vec(&req).unwrap();
    let (status, _, first) = call(&app, Method::POST, "/predict", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let r: WhatIfResponse = parse(&first);
    assert_eq!(r.candidates.len(), 2);
    let ids = |c: usize| r.candidates[c].agents.iter().map(|a| a.id).collect::<Vec<_>>();
    assert_eq!(ids(0), ids(1));
    let expected: Vec<u32> = req.agents.iter().filter(|a| !a.controlled && a.positions.last().unwrap().is_some()).map(|a| a.id).collect();
    assert_eq!(ids(0), expected);

    // identical requests, sequential and concurrent, give identical bytes
    let tasks: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            let body = body.clone();
            tokio::spawn(async move { call(&app, Method::POST, "/predict", Some(body)).await.2 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), first);
    }

    let mut alone = req.clone();
    alone.agents.retain(|a| a.controlled);
    let (status, _, bytes) = call(&app, Method::POST, "/predict", Some(serde_json::to_vec(&alone).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let r: WhatIfResponse = parse(&bytes);
    assert_eq!(r.candidates.len(), 2);
    assert!(r.candidates.iter().all(|c| c.agents.is_empty()));
}

#[tokio::test]
async fn structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let app = router(svc.clone());
    let mut req = svc.scenario("approach-00").unwrap().request();
    req.candidates[0].pop();
    let (status, _, bytes) = call(&app, Method::POST, "/predict", Some(serde_json::to_vec(&req).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let e: ServiceError = parse(&bytes);
    assert!(e.message.contains("horizon mismatch"));
    assert_eq!(e.field.as_deref(), Some("candidates[0]"));

    let mut value = serde_json::to_value(svc.scenario("approach-00").unwrap().request()).unwrap();
    value["agents"][0]["colour"] = "red".into();
    let (status, _, bytes) = call(&app, Method::POST, "/predict", Some(serde_json::to_vec(&value).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let e: ServiceError = parse(&bytes);
    assert_eq!(e.field.as_deref(), Some("agents[0].colour"));
    assert!(e.message.contains("colour"));

    let (status, _, bytes) = call(&app, Method::POST, "/predict", Some(b"{\"agents\": 3}".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(parse::<ServiceError>(&bytes).field.as_deref(), Some("agents"));
}
