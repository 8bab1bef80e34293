//! Backend for the subjective rating study.
//!
//! Routes:
//!
//! - `GET /session/{subject}`: session state (subset, order, cursor)
//! - `GET /session/{subject}/current`: the item to rate next
//! - `GET /session/{subject}/previous`: the last rated item, read-only
//! - `POST /session/{subject}/rating`: `{asset_id, q, a, c, overwrite?}`
//! - `GET /media/{asset_id}`: the projection video, with range requests
//! - `GET /export.csv`: ratings in the pipeline's CSV schema
//!
//! All state is rebuilt from the append-only store on start, so a restart
//! resumes every session at its cursor.

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::Mutex;
use tower::ServiceExt;
use tower_http::services::ServeFile;

pub use store::{
    Acknowledgment, ItemView, RatingStore, RatingSubmission, SessionView, StoreConfig, StoreError,
};

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let status = match &self {
            StoreError::Forbidden(_) => StatusCode::FORBIDDEN,
            StoreError::UnknownAsset(_) | StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<RatingStore>>,
    media_dir: Arc<PathBuf>,
}

impl AppState {
    pub fn new(store: RatingStore, media_dir: PathBuf) -> Self {
        AppState {
            store: Arc::new(Mutex::new(store)),
            media_dir: Arc::new(media_dir),
        }
    }

    pub fn store(&self) -> Arc<Mutex<RatingStore>> {
        Arc::clone(&self.store)
    }
}

async fn session(
    State(st): State<AppState>,
    Path(subject): Path<String>,
) -> Result<Json<SessionView>, StoreError> {
    Ok(Json(st.store.lock().await.session(&subject)?))
}

async fn current(
    State(st): State<AppState>,
    Path(subject): Path<String>,
) -> Result<Json<ItemView>, StoreError> {
    Ok(Json(st.store.lock().await.current(&subject)?))
}

async fn previous(
    State(st): State<AppState>,
    Path(subject): Path<String>,
) -> Result<Json<ItemView>, StoreError> {
    Ok(Json(st.store.lock().await.previous(&subject)?))
}

async fn rate(
    State(st): State<AppState>,
    Path(subject): Path<String>,
    Json(sub): Json<RatingSubmission>,
) -> Result<Json<Acknowledgment>, StoreError> {
    Ok(Json(st.store.lock().await.submit(&subject, &sub)?))
}

async fn media(State(st): State<AppState>, Path(asset_id): Path<String>, req: Request) -> Response {
    let path = match st.store.lock().await.media_path(&asset_id, &st.media_dir) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    match ServeFile::new(path).oneshot(req).await {
        Ok(res) => res.map(Body::new),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn export(State(st): State<AppState>) -> Response {
    let body = st.store.lock().await.export_csv();
    ([(header::CONTENT_TYPE, "text/csv")], body).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session/{subject}", get(session))
        .route("/session/{subject}/current", get(current))
        .route("/session/{subject}/previous", get(previous))
        .route("/session/{subject}/rating", post(rate))
        .route("/media/{asset_id}", get(media))
        .route("/export.csv", get(export))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("rating service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
