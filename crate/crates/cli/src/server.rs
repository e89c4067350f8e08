//! HTTP transport: `POST /predict` and `GET /meta` over shared, read-only
//! models.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use topo_surrogate::SurrogateSet;
use tower_http::cors::CorsLayer;

use crate::api::{self, ApiError};

pub const PORT_ENV: &str = "TOPO_PORT";
pub const DEFAULT_PORT: u16 = 8080;

pub fn router(set: Arc<SurrogateSet>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/meta", get(meta))
        .layer(CorsLayer::permissive())
        .with_state(set)
}

async fn predict(State(set): State<Arc<SurrogateSet>>, body: Bytes) -> Response {
    // Inference is CPU-bound; keep it off the async workers.
    match tokio::task::spawn_blocking(move || api::handle_predict(&set, &body)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(serde_json::json!({ "error": format!("prediction task failed: {e}") })),
        )
            .into_response(),
    }
}

async fn meta(State(set): State<Arc<SurrogateSet>>) -> Json<api::MetaResponse> {
    Json(api::meta(&set))
}

fn error_response(e: ApiError) -> Response {
    let status = StatusCode::from_u16(e.status.code()).expect("valid status code");
    (status, Json(serde_json::json!({ "error": e.message }))).into_response()
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve_on(listener: TcpListener, set: Arc<SurrogateSet>) -> std::io::Result<()> {
    axum::serve(listener, router(set)).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, set: Arc<SurrogateSet>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!(
        "serving {} models {} on http://{}",
        set.family(),
        set.fingerprint(),
        listener.local_addr()?
    );
    axum::serve(listener, router(set))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
