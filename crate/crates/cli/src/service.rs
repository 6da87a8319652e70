//! HTTP front end over a shared, immutable [`Router`].

use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use benchroute::jsonfmt;
use benchroute::ood::read_pairs_csv;
use benchroute::{BenchmarkStore, RouteRequest, Router, RouterError};
use serde::Serialize;
use tokio::net::TcpListener;

use crate::config::ServiceConfig;

/// Load the store and fit (or load) the smoother described by `cfg`.
pub fn load_router(cfg: &ServiceConfig) -> Result<Router> {
    let dir = cfg.store.dir.as_ref().context("no store directory configured")?;
    let store = BenchmarkStore::load_dir(dir)?;
    let router = match &cfg.store.pairs {
        Some(p) => Router::with_pairs(store, cfg.router.clone(), read_pairs_csv(p)?)?,
        None => Router::fit(store, cfg.router.clone(), cfg.execution)?,
    };
    Ok(router)
}

/// The decision JSON shared by the CLI and the HTTP service.
pub fn route_json(router: &Router, req: &RouteRequest) -> benchroute::Result<String> {
    let resp = router.route(req)?;
    Ok(jsonfmt::to_string(&resp)?)
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_response(status: StatusCode, reason: &str, message: String) -> Response {
    let body = serde_json::to_string(&ErrorBody {
        error: reason,
        message,
    })
    .expect("error body serializes");
    json_response(status, body)
}

fn status_for(err: &RouterError) -> StatusCode {
    match err {
        RouterError::Schema { .. }
        | RouterError::Validation(_)
        | RouterError::DimensionMismatch { .. }
        | RouterError::NotFound { .. }
        | RouterError::Mode(_)
        | RouterError::Domain(_)
        | RouterError::Json(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn route(State(router): State<Arc<Router>>, body: Bytes) -> Response {
    let req: RouteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()),
    };
    if req.inputs.is_empty() {
        return error_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_inputs",
            "request has no inputs".into(),
        );
    }
    let result = tokio::task::spawn_blocking(move || route_json(&router, &req)).await;
    match result {
        Ok(Ok(body)) => json_response(StatusCode::OK, body),
        Ok(Err(e)) => error_response(status_for(&e), e.reason(), e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn models(State(router): State<Arc<Router>>) -> Response {
    let body = jsonfmt::to_string(router.store().models()).expect("roster serializes");
    json_response(StatusCode::OK, body)
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    models: usize,
    tasks: usize,
    samples: usize,
    smoother: bool,
}

async fn healthz(State(router): State<Arc<Router>>) -> Response {
    let store = router.store();
    let body = serde_json::to_string(&Health {
        status: "ok",
        models: store.models().len(),
        tasks: store.tasks().len(),
        samples: store.len(),
        smoother: router.smoother().is_some(),
    })
    .expect("health serializes");
    json_response(StatusCode::OK, body)
}

pub fn app(router: Arc<Router>) -> axum::Router {
    axum::Router::new()
        .route("/v1/route", post(route))
        .route("/v1/models", get(models))
        .route("/v1/healthz", get(healthz))
        .with_state(router)
}

pub async fn serve(listener: TcpListener, router: Arc<Router>) -> Result<()> {
    axum::serve(listener, app(router))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
