//! HTTP transport for the what-if service.
//!
//! Bodies are JSON. Errors use the service's structured error body. Wall
//! time of a prediction travels in the `x-compute-ms` header so that
//! identical requests get identical response bodies.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use rrnn_core::service::{parse_request, ErrorKind, ServiceError, WhatIfService};
use serde::Serialize;

pub const COMPUTE_HEADER: &str = "x-compute-ms";

type Shared = Arc<WhatIfService>;

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(serde_json::to_vec(value).expect("responses serialize")))
        .expect("valid response")
}

fn error(e: &ServiceError) -> Response {
    json(StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), e)
}

async fn info(State(s): State<Shared>) -> Response {
    json(StatusCode::OK, &s.info())
}

async fn scenarios(State(s): State<Shared>) -> Response {
    json(StatusCode::OK, &s.scenario_index())
}

async fn scenario(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match s.scenario(&id) {
        Ok(sc) => json(StatusCode::OK, sc),
        Err(e) => error(&e),
    }
}

async fn predict(State(s): State<Shared>, body: Bytes) -> Response {
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(move || parse_request(&body).and_then(|r| s.predict(&r))).await;
    let mut response = match result {
        Ok(Ok(r)) => json(StatusCode::OK, &r),
        Ok(Err(e)) => error(&e),
        Err(e) => error(&ServiceError { error: ErrorKind::Internal, field: None, message: e.to_string() }),
    };
    let ms = format!("{:.3}", started.elapsed().as_secs_f64() * 1000.0);
    response.headers_mut().insert(COMPUTE_HEADER, HeaderValue::from_str(&ms).expect("ascii"));
    response
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn not_found() -> Response {
    error(&ServiceError::not_found("no such endpoint"))
}

/// The browser UI may be served from another origin.
async fn cors(mut response: Response) -> Response {
    let h = response.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    h.insert(header::ACCESS_CONTROL_EXPOSE_HEADERS, HeaderValue::from_static(COMPUTE_HEADER));
    response
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/scenarios", get(scenarios))
        .route("/scenarios/{id}", get(scenario))
        .route("/predict", axum::routing::post(predict).options(preflight))
        .fallback(not_found)
        .layer(axum::middleware::map_response(cors))
        .with_state(service)
}

/// Serves until interrupted.
pub fn serve(service: WhatIfService, bind: &str, workers: usize) -> std::io::Result<()> {
    let addr: SocketAddr = bind
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bind address `{bind}`: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(workers.max(1)).enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(service)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

