//! HTTP routes over [`Gateway`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use pillcase_core::device::{Action, DeviceError};
use pillcase_core::engine::EngineError;
use serde::{Deserialize, Serialize};

use crate::service::{Gateway, GatewayError, PrescriptionRequest, RegisterRequest};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::UnknownDevice(_) => StatusCode::NOT_FOUND,
            GatewayError::Validation(_)
            | GatewayError::Engine(EngineError::InvalidPrescription(_))
            | GatewayError::Device(DeviceError::Config(_) | DeviceError::ZeroPills | DeviceError::Battery(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            GatewayError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        let body = ErrorBody { code: self.code().to_owned(), message: self.to_string() };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Registered {
    pub device_id: u64,
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

#[derive(Debug, Serialize)]
struct CatalogEntry<'a> {
    id: &'a str,
    name: &'a str,
    unit_weight: f64,
}

type Shared = State<Arc<Gateway>>;

async fn register(State(gw): Shared, body: Option<Json<RegisterRequest>>) -> Result<impl IntoResponse, GatewayError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let device_id = gw.register_device(&req)?;
    Ok((StatusCode::CREATED, Json(Registered { device_id })))
}

async fn list(State(gw): Shared) -> Json<Vec<u64>> {
    Json(gw.list_devices())
}

async fn prescription(
    State(gw): Shared,
    Path(id): Path<u64>,
    Json(req): Json<PrescriptionRequest>,
) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.set_prescription(id, &req)?))
}

async fn action(State(gw): Shared, Path(id): Path<u64>, Json(a): Json<Action>) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.device_action(id, a)?))
}

async fn scan(State(gw): Shared, Path(id): Path<u64>) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.scan(id)?))
}

async fn events(State(gw): Shared, Path(id): Path<u64>, Query(q): Query<Since>) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.get_events(id, q.since)?))
}

async fn status(State(gw): Shared, Path(id): Path<u64>) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.status(id)?))
}

async fn catalog(State(gw): Shared) -> impl IntoResponse {
    let entries: Vec<CatalogEntry> = gw
        .catalog()
        .iter()
        .map(|(id, m)| CatalogEntry { id, name: &m.name, unit_weight: m.unit_weight })
        .collect();
    Json(serde_json::to_value(entries).expect("catalog serializes"))
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/devices", post(register).get(list))
        .route("/devices/{id}/prescription", put(prescription))
        .route("/devices/{id}/action", post(action))
        .route("/devices/{id}/scan", post(scan))
        .route("/devices/{id}/events", get(events))
        .route("/devices/{id}/status", get(status))
        .route("/catalog", get(catalog))
        .with_state(gateway)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, gateway: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
