//! HTTP facade over the audit pipelines: datasets, t-SNE / probe / lag jobs,
//! versioned cluster labels, bias reports and image-set edge reports.
//!
//! Everything is JSON except uploads (multipart) and layout / mean-image
//! downloads, which can be CSV and PGM.

mod error;
mod images;
mod jobs;
mod routes;
mod state;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ApiResult};
pub use jobs::{JobKind, JobProgress, JobSnapshot, JobState};
pub use state::{AppState, ServiceConfig};

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    Router::new()
        .route("/datasets", post(routes::post_dataset))
        .route("/datasets/{id}", get(routes::get_dataset))
        .route("/datasets/{id}/jobs/tsne", post(routes::submit_tsne))
        .route("/datasets/{id}/jobs/probe", post(routes::submit_probe))
        .route("/datasets/{id}/jobs/lag", post(routes::submit_lag))
        .route("/datasets/{id}/clusters", get(routes::get_clusters).put(routes::put_clusters))
        .route("/datasets/{id}/bias/regions", get(routes::get_bias_regions))
        .route("/jobs/{id}", get(routes::get_job).delete(routes::cancel_job))
        .route("/jobs/{id}/layout", get(routes::get_layout))
        .route("/jobs/{id}/result", get(routes::get_result))
        .route("/imagesets", post(images::post_imageset))
        .route("/imagesets/{id}", get(images::get_imageset))
        .route("/imagesets/{id}/edge-report", get(images::get_edge_report))
        .route("/imagesets/{id}/mean-image", get(images::get_mean_image))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
