use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use embaudit_core::cluster_tools::REST_LABEL;
use embaudit_core::image_analysis::{
    edge_profile, estimate_shift, normalize_and_crop, parse_rawf32, read_pgm, write_pgm, write_profiles_csv, Image,
    MeanAccumulator, MeanProfile, RawSidecar, CROP_SIZE, EDGE_THRESHOLD,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::AppState;

/// Per-cluster mean images of an uploaded image set. Individual images are
/// not retained.
pub(crate) struct ImageSet {
    pub id: String,
    pub clusters: BTreeMap<String, (usize, Image<f64>)>,
}

impl ImageSet {
    fn cluster(&self, label: &str) -> ApiResult<&(usize, Image<f64>)> {
        self.clusters.get(label).ok_or_else(|| ApiError::NotFound(format!("cluster {label} in image set {}", self.id)))
    }
}

#[derive(Debug, Serialize)]
pub struct ImageSetSummary {
    pub imageset_id: String,
    pub clusters: BTreeMap<String, usize>,
}

fn summary(set: &ImageSet) -> ImageSetSummary {
    ImageSetSummary {
        imageset_id: set.id.clone(),
        clusters: set.clusters.iter().map(|(k, (n, _))| (k.clone(), *n)).collect(),
    }
}

/// Multipart upload. Each image is a field named `image` (cluster "rest") or
/// `image:<cluster>`; PGM is detected by its magic, anything else is RAWF32
/// described by the most recent `sidecar` field.
pub async fn post_imageset(State(state): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let mut sidecar: Option<RawSidecar> = None;
    let mut acc: BTreeMap<String, MeanAccumulator> = BTreeMap::new();
    while let Some(field) = form.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        let file = field.file_name().unwrap_or_default().to_string();
        let bytes = field.bytes().await?;
        if name == "sidecar" {
            sidecar = Some(serde_json::from_slice(&bytes).map_err(embaudit_core::Error::from)?);
            continue;
        }
        let label = match name.as_str() {
            "image" => REST_LABEL,
            n => n
                .strip_prefix("image:")
                .filter(|l| !l.is_empty())
                .ok_or_else(|| ApiError::Invalid(format!("unexpected form field `{n}`")))?,
        };
        let raw = if bytes.starts_with(b"P5") {
            read_pgm(&bytes[..])
        } else {
            let meta = sidecar
                .as_ref()
                .ok_or_else(|| ApiError::Invalid(format!("image `{file}` is not PGM and no sidecar was sent")))?;
            parse_rawf32(&bytes, meta)
        }
        .map_err(|e| ApiError::Invalid(format!("image `{file}`: {e}")))?;
        let img: Image<f64> =
            normalize_and_crop(&raw, CROP_SIZE).map_err(|e| ApiError::Invalid(format!("image `{file}`: {e}")))?;
        acc.entry(label.to_string()).or_insert_with(|| MeanAccumulator::new(CROP_SIZE, CROP_SIZE)).add(&img)?;
    }
    if acc.is_empty() {
        return Err(ApiError::Invalid("image set holds no images".into()));
    }
    let clusters = acc
        .into_iter()
        .map(|(label, a)| Ok((label, (a.count(), a.finish()?))))
        .collect::<embaudit_core::Result<_>>()?;
    let set = Arc::new(ImageSet { id: format!("img-{}", state.next_id()), clusters });
    state.0.imagesets.write().expect("imageset lock").insert(set.id.clone(), set.clone());
    Ok((StatusCode::CREATED, Json(summary(&set))).into_response())
}

fn imageset(state: &AppState, id: &str) -> ApiResult<Arc<ImageSet>> {
    state
        .0
        .imagesets
        .read()
        .expect("imageset lock")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("image set {id}")))
}

pub async fn get_imageset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ImageSetSummary>> {
    let set = imageset(&state, &id)?;
    Ok(Json(summary(&set)))
}

#[derive(Debug, Deserialize)]
pub struct EdgeQuery {
    /// Comma-separated cluster labels; all clusters when absent.
    clusters: Option<String>,
    tau: Option<f64>,
    max_shift: Option<usize>,
    /// Voxel spacing; shifts are also reported in mm when given.
    spacing_mm: Option<f64>,
    format: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ClusterProfile {
    pub label: String,
    pub count: usize,
    pub profile: Vec<Option<f64>>,
    pub mean_image: String,
}

#[derive(Debug, Serialize)]
pub struct PairShift {
    pub a: String,
    pub b: String,
    pub shift: Option<i64>,
    pub shift_mm: Option<f64>,
    pub score: Option<f64>,
    pub overlap: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct EdgeReport {
    pub tau: f64,
    pub max_shift: usize,
    pub clusters: Vec<ClusterProfile>,
    /// Every pair `a < b` in request order; positive shifts mean `b` sits lower.
    pub shifts: Vec<PairShift>,
}

pub async fn get_edge_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EdgeQuery>,
) -> ApiResult<Response> {
    let set = imageset(&state, &id)?;
    let tau = q.tau.unwrap_or(EDGE_THRESHOLD);
    if !(0.0..=1.0).contains(&tau) {
        return Err(ApiError::Invalid(format!("tau {tau} outside [0, 1]")));
    }
    if q.spacing_mm.is_some_and(|s| !(s > 0.0)) {
        return Err(ApiError::Invalid("spacing_mm must be positive".into()));
    }
    let max_shift = q.max_shift.unwrap_or(128);
    let labels: Vec<String> = match &q.clusters {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => set.clusters.keys().cloned().collect(),
    };
    let profiles: Vec<(String, usize, MeanProfile)> = labels
        .iter()
        .map(|l| set.cluster(l).map(|(n, img)| (l.clone(), *n, edge_profile(img, tau).to_mean())))
        .collect::<ApiResult<_>>()?;

    if q.format.as_deref() == Some("csv") {
        let cols: Vec<(&str, &MeanProfile)> = profiles.iter().map(|(l, _, p)| (l.as_str(), p)).collect();
        let mut buf = Vec::new();
        write_profiles_csv(&mut buf, &cols)?;
        return Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response());
    }

    let mut shifts = Vec::new();
    for (i, (la, _, pa)) in profiles.iter().enumerate() {
        for (lb, _, pb) in &profiles[i + 1..] {
            let mut pair = PairShift {
                a: la.clone(),
                b: lb.clone(),
                shift: None,
                shift_mm: None,
                score: None,
                overlap: None,
                error: None,
            };
            match estimate_shift(pa, pb, max_shift) {
                Ok(est) => {
                    pair.shift = Some(est.shift);
                    pair.shift_mm = q.spacing_mm.map(|s| est.shift as f64 * s);
                    pair.score = Some(est.score);
                    pair.overlap = Some(est.overlap);
                }
                Err(e) => pair.error = Some(e.to_string()),
            }
            shifts.push(pair);
        }
    }
    let clusters = profiles
        .into_iter()
        .map(|(label, count, p)| ClusterProfile {
            mean_image: format!("/imagesets/{id}/mean-image?cluster={label}"),
            label,
            count,
            profile: p.values,
        })
        .collect();
    Ok(Json(EdgeReport { tau, max_shift, clusters, shifts }).into_response())
}

#[derive(Debug, Deserialize)]
pub struct MeanQuery {
    cluster: String,
}

/// 16-bit PGM of a cluster's mean image.
pub async fn get_mean_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MeanQuery>,
) -> ApiResult<Response> {
    let set = imageset(&state, &id)?;
    let (_, img) = set.cluster(&q.cluster)?;
    let mut buf = Vec::new();
    write_pgm(&mut buf, img, u16::MAX)?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], buf).into_response())
}
