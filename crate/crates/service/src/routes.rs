use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use embaudit_core::cluster_tools::{
    assign_clusters, cross_region_consistency, ConsistencyReport, Polygon, REST_LABEL,
};
use embaudit_core::data_model::{ingest_embeddings, read_embeddings, read_metadata_csv, RecordKey, SubjectMetadata};
use embaudit_core::probes::{
    run_lag, run_probe, Kernel, LagParams, ProbeConfig, ProbeTarget, RegParams, SvmParams,
};
use embaudit_core::tsne::{tsne_layout, write_layout_csv, LayoutPoint, Progress, TsneParams};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{cache_key, Job, JobKind, JobOutput, JobProgress, JobSnapshot, JobState};
use crate::state::{AppState, ClusterState, StoredDataset};

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub n_records: usize,
    pub n_subjects: usize,
    pub dim: usize,
    pub records_per_region: BTreeMap<String, usize>,
    /// Subjects with a value, per metadata field.
    pub metadata_coverage: BTreeMap<&'static str, usize>,
    pub rejected_subjects: Vec<String>,
    pub rejected_records: usize,
}

fn summarize(stored: &StoredDataset) -> DatasetSummary {
    let ds = &stored.dataset;
    let mut per_region = BTreeMap::new();
    for r in ds.records() {
        *per_region.entry(r.region.to_string()).or_insert(0) += 1;
    }
    let subjects: Vec<_> = ds.subject_ids().filter_map(|s| ds.subject(s)).collect();
    let count = |f: fn(&SubjectMetadata) -> bool| subjects.iter().filter(|m| f(m)).count();
    let coverage = BTreeMap::from([
        ("sex", count(|m| m.sex.is_some())),
        ("age_years", count(|m| m.age_years.is_some())),
        ("height_m", count(|m| m.height_m.is_some())),
        ("weight_kg", count(|m| m.weight_kg.is_some())),
        ("location", count(|m| m.location.is_some())),
        ("acq_date", count(|m| m.acq_date.is_some())),
    ]);
    DatasetSummary {
        dataset_id: stored.id.clone(),
        n_records: ds.len(),
        n_subjects: subjects.len(),
        dim: ds.dim(),
        records_per_region: per_region,
        metadata_coverage: coverage,
        rejected_subjects: stored.report.rejected_subjects.clone(),
        rejected_records: stored.report.rejected_records,
    }
}

/// Multipart fields `embeddings` (EMB1 or CSV) and `metadata` (CSV).
pub async fn post_dataset(State(state): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let (mut emb, mut meta) = (None, None);
    while let Some(field) = form.next_field().await? {
        match field.name() {
            Some("embeddings") => emb = Some(field.bytes().await?),
            Some("metadata") => meta = Some(field.bytes().await?),
            other => return Err(ApiError::Invalid(format!("unexpected form field {other:?}"))),
        }
    }
    let emb = emb.ok_or_else(|| ApiError::Invalid("missing form field `embeddings`".into()))?;
    let meta = meta.ok_or_else(|| ApiError::Invalid("missing form field `metadata`".into()))?;

    let mut h = Sha256::new();
    h.update((emb.len() as u64).to_le_bytes());
    h.update(&emb);
    h.update(&meta);
    let id = format!("ds-{}", &format!("{:x}", h.finalize())[..16]);

    if let Ok(existing) = state.dataset(&id) {
        return Ok((StatusCode::OK, Json(summarize(&existing))).into_response());
    }
    let (emb_ref, meta_ref) = (emb.clone(), meta.clone());
    let (dataset, report) = tokio::task::spawn_blocking(move || {
        ingest_embeddings(read_embeddings(&emb_ref)?, read_metadata_csv(&meta_ref[..])?)
    })
    .await
    .map_err(|e| ApiError::Invalid(e.to_string()))??;

    if let Some(dir) = &state.config().data_dir {
        let dir = dir.join("datasets").join(&id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("embeddings"), &emb)?;
        std::fs::write(dir.join("metadata.csv"), &meta)?;
    }
    let stored = Arc::new(StoredDataset { id: id.clone(), dataset, report });
    state.0.datasets.write().expect("dataset lock").entry(id).or_insert_with(|| stored.clone());
    Ok((StatusCode::CREATED, Json(summarize(&stored))).into_response())
}

pub async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetSummary>> {
    let stored = state.dataset(&id)?;
    Ok(Json(summarize(&stored)))
}

fn accepted(job_id: String, cached: bool) -> Response {
    let status = if cached { StatusCode::OK } else { StatusCode::ACCEPTED };
    (status, Json(json!({ "job_id": job_id, "cached": cached }))).into_response()
}

pub async fn submit_tsne(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(params): Json<TsneParams>,
) -> ApiResult<Response> {
    let stored = state.dataset(&id)?;
    params.validate(stored.dataset.len())?;
    let key = cache_key(JobKind::Tsne, &id, &serde_json::to_value(&params).expect("params serialize"));
    let (job_id, cached) = state.submit(
        JobKind::Tsne,
        &id,
        key,
        Box::new(move |job: &Job| {
            let monitor = |p: &Progress| {
                job.set_progress(JobProgress { current: p.iteration, total: p.total, kl: Some(p.kl) });
                !job.cancel_requested()
            };
            tsne_layout::<f64>(&stored.dataset, &params, &monitor).map(JobOutput::Tsne)
        }),
    );
    Ok(accepted(job_id, cached))
}

/// Flat probe parameters; `C` is the SVM box constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeRequest {
    pub target: ProbeTarget,
    pub kernel: Kernel<f64>,
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    pub tol: f64,
    pub balance: bool,
    pub bins: usize,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for ProbeRequest {
    fn default() -> Self {
        let cfg = ProbeConfig::default();
        ProbeRequest {
            target: cfg.target,
            kernel: cfg.svm.kernel,
            c: cfg.svm.c,
            tol: cfg.svm.tol,
            balance: cfg.balance,
            bins: cfg.bins,
            seed: cfg.seed,
            epsilon: cfg.regression.epsilon,
            lambda: cfg.regression.lambda,
            epochs: cfg.regression.epochs,
        }
    }
}

impl ProbeRequest {
    fn config(&self) -> ApiResult<ProbeConfig> {
        let svm = SvmParams { kernel: self.kernel, c: self.c, tol: self.tol, ..SvmParams::default() };
        svm.validate()?;
        if self.bins == 0 {
            return Err(ApiError::Invalid("bins must be positive".into()));
        }
        if self.epsilon.is_some_and(|e| !(e >= 0.0)) || !(self.lambda >= 0.0) {
            return Err(ApiError::Invalid("epsilon and lambda must be non-negative".into()));
        }
        Ok(ProbeConfig {
            target: self.target,
            svm,
            regression: RegParams { epsilon: self.epsilon, lambda: self.lambda, epochs: self.epochs },
            balance: self.balance,
            bins: self.bins,
            seed: self.seed,
        })
    }
}

pub async fn submit_probe(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ProbeRequest>,
) -> ApiResult<Response> {
    let stored = state.dataset(&id)?;
    let config = req.config()?;
    let clusters = state.cluster_state(&id);
    let params = json!({ "probe": req, "cluster_version": clusters.version });
    let key = cache_key(JobKind::Probe, &id, &params);
    let labeling = clusters.labeling;
    let (job_id, cached) = state.submit(
        JobKind::Probe,
        &id,
        key,
        Box::new(move |job: &Job| {
            job.set_progress(JobProgress { current: 0, total: 1, kl: None });
            let report = run_probe(&stored.dataset, &config, labeling.as_ref().map(|l| &l.assignment))?;
            job.set_progress(JobProgress { current: 1, total: 1, kl: None });
            Ok(JobOutput::Probe(report))
        }),
    );
    Ok(accepted(job_id, cached))
}

/// A cluster label from the current labeling, or explicit ids: `subject/region`
/// selects one record, a bare subject id selects all of its records.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubgroupSpec {
    Cluster { cluster: String },
    Ids(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagRequest {
    pub subgroup: SubgroupSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_epochs() -> usize {
    LagParams::default().epochs
}

fn default_lr() -> f64 {
    LagParams::default().lr
}

fn default_val_fraction() -> f64 {
    LagParams::default().val_fraction
}

fn resolve_subgroup(state: &AppState, stored: &StoredDataset, spec: &SubgroupSpec) -> ApiResult<BTreeSet<RecordKey>> {
    let ds = &stored.dataset;
    let keys: BTreeSet<RecordKey> = match spec {
        SubgroupSpec::Cluster { cluster } => {
            let labeling = state
                .cluster_state(&stored.id)
                .labeling
                .ok_or_else(|| ApiError::Conflict("dataset has no cluster labeling".into()))?;
            if cluster != REST_LABEL && !labeling.polygons.iter().any(|p| &p.label == cluster) {
                return Err(ApiError::NotFound(format!("cluster {cluster}")));
            }
            labeling.members(cluster).cloned().collect()
        }
        SubgroupSpec::Ids(ids) => {
            let mut keys = BTreeSet::new();
            for id in ids {
                if id.contains('/') {
                    let key: RecordKey = id.parse()?;
                    if !ds.records().iter().any(|r| r.subject_id == key.subject_id && r.region == key.region) {
                        return Err(ApiError::NotFound(format!("record {key}")));
                    }
                    keys.insert(key);
                } else {
                    let before = keys.len();
                    keys.extend(ds.records().iter().filter(|r| &r.subject_id == id).map(|r| r.key()));
                    if keys.len() == before && !ds.records().iter().any(|r| &r.subject_id == id) {
                        return Err(ApiError::NotFound(format!("subject {id}")));
                    }
                }
            }
            keys
        }
    };
    if keys.is_empty() {
        return Err(ApiError::Invalid("subgroup is empty".into()));
    }
    if keys.len() == ds.len() {
        return Err(ApiError::Invalid("subgroup covers the whole dataset".into()));
    }
    Ok(keys)
}

pub async fn submit_lag(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<LagRequest>,
) -> ApiResult<Response> {
    let stored = state.dataset(&id)?;
    if !(req.lr > 0.0) || !(0.0..1.0).contains(&req.val_fraction) {
        return Err(ApiError::Invalid("lr must be positive and val_fraction in [0, 1)".into()));
    }
    let subgroup = resolve_subgroup(&state, &stored, &req.subgroup)?;
    let params = LagParams { epochs: req.epochs, lr: req.lr, seed: req.seed, val_fraction: req.val_fraction };
    let members: Vec<String> = subgroup.iter().map(|k| k.to_string()).collect();
    let key = cache_key(JobKind::Lag, &id, &json!({ "params": params, "subgroup": members }));
    let (job_id, cached) = state.submit(
        JobKind::Lag,
        &id,
        key,
        Box::new(move |job: &Job| {
            job.set_progress(JobProgress { current: 0, total: params.epochs, kl: None });
            let report = run_lag(&stored.dataset, &subgroup, &params)?;
            job.set_progress(JobProgress { current: params.epochs, total: params.epochs, kl: None });
            Ok(JobOutput::Lag(report))
        }),
    );
    Ok(accepted(job_id, cached))
}

pub async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobSnapshot>> {
    Ok(Json(state.job(&id)?.snapshot()))
}

pub async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobSnapshot>> {
    let job = state.job(&id)?;
    let snap = job.snapshot();
    if snap.state.is_final() {
        return Err(ApiError::Conflict(format!("job {id} already {:?}", snap.state).to_lowercase()));
    }
    job.request_cancel();
    Ok(Json(job.snapshot()))
}

fn finished(state: &AppState, id: &str) -> ApiResult<Arc<Job>> {
    let job = state.job(id)?;
    match job.state() {
        JobState::Done => Ok(job),
        other => Err(ApiError::Conflict(format!("job {id} is {}", format!("{other:?}").to_lowercase()))),
    }
}

#[derive(Debug, Deserialize)]
pub struct LayoutQuery {
    #[serde(default)]
    format: Option<String>,
}

pub async fn get_layout(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LayoutQuery>,
) -> ApiResult<Response> {
    let job = finished(&state, &id)?;
    let Some(JobOutput::Tsne(layout)) = job.output() else {
        return Err(ApiError::Invalid(format!("job {id} is not a t-SNE job")));
    };
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(&layout.points).into_response()),
        Some("csv") => {
            let mut buf = Vec::new();
            write_layout_csv(&mut buf, &layout.points)?;
            Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response())
        }
        Some(other) => Err(ApiError::Invalid(format!("unknown layout format `{other}`"))),
    }
}

pub async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = finished(&state, &id)?;
    let body = match job.output().expect("done jobs hold output") {
        JobOutput::Tsne(l) => json!({ "exact": l.exact, "kl_trace": l.kl_trace, "points": l.points }),
        JobOutput::Probe(r) => serde_json::to_value(r).map_err(embaudit_core::Error::from)?,
        JobOutput::Lag(r) => serde_json::to_value(r).map_err(embaudit_core::Error::from)?,
    };
    Ok(Json(body).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ClusterEdit {
    /// Version the client last saw; must equal the current one.
    pub version: u64,
    pub polygons: Vec<Polygon>,
    /// Layout to label; defaults to the dataset's latest finished t-SNE job.
    #[serde(default)]
    pub layout_job: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AssignedPoint {
    pub subject_id: String,
    pub region: String,
    pub label: String,
}

#[derive(Debug, Serialize)]
pub struct ClusterSummary {
    pub version: u64,
    pub layout_job: Option<String>,
    pub polygons: Vec<Polygon>,
    pub counts: BTreeMap<String, usize>,
    pub assignment: Vec<AssignedPoint>,
}

fn cluster_summary(cs: &ClusterState) -> ClusterSummary {
    let (counts, assignment) = match &cs.labeling {
        Some(l) => (
            l.counts(),
            l.assignment
                .iter()
                .map(|(k, label)| AssignedPoint {
                    subject_id: k.subject_id.clone(),
                    region: k.region.to_string(),
                    label: label.clone(),
                })
                .collect(),
        ),
        None => (BTreeMap::new(), Vec::new()),
    };
    ClusterSummary { version: cs.version, layout_job: cs.layout_job.clone(), polygons: cs.polygons.clone(), counts, assignment }
}

fn layout_for(state: &AppState, dataset_id: &str, requested: Option<&str>) -> ApiResult<(String, Vec<LayoutPoint>)> {
    let job = match requested {
        Some(id) => finished(state, id)?,
        None => state
            .0
            .jobs
            .read()
            .expect("job lock")
            .values()
            .filter(|j| j.kind == JobKind::Tsne && j.dataset_id == dataset_id && j.state() == JobState::Done)
            .max_by_key(|j| j.seq)
            .cloned()
            .ok_or_else(|| ApiError::Conflict(format!("dataset {dataset_id} has no finished layout")))?,
    };
    match job.output() {
        Some(JobOutput::Tsne(l)) if job.dataset_id == dataset_id => Ok((job.id.clone(), l.points.clone())),
        _ => Err(ApiError::Invalid(format!("job {} is not a layout of dataset {dataset_id}", job.id))),
    }
}

pub async fn put_clusters(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(edit): Json<ClusterEdit>,
) -> ApiResult<Json<ClusterSummary>> {
    state.dataset(&id)?;
    let (layout_job, points) = layout_for(&state, &id, edit.layout_job.as_deref())?;
    let labeling = assign_clusters(&points, &edit.polygons)?;
    let mut all = state.0.clusters.lock().expect("cluster lock");
    let current = all.entry(id).or_default();
    if edit.version != current.version {
        return Err(ApiError::Conflict(format!(
            "stale cluster version {} (current is {})",
            edit.version, current.version
        )));
    }
    *current = ClusterState {
        version: current.version + 1,
        layout_job: Some(layout_job),
        polygons: edit.polygons,
        labeling: Some(Arc::new(labeling)),
    };
    Ok(Json(cluster_summary(current)))
}

pub async fn get_clusters(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ClusterSummary>> {
    state.dataset(&id)?;
    Ok(Json(cluster_summary(&state.cluster_state(&id))))
}

#[derive(Debug, Deserialize)]
pub struct BiasQuery {
    probe_job: String,
}

pub async fn get_bias_regions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<BiasQuery>,
) -> ApiResult<Json<ConsistencyReport>> {
    state.dataset(&id)?;
    let job = finished(&state, &q.probe_job)?;
    let Some(JobOutput::Probe(report)) = job.output() else {
        return Err(ApiError::Invalid(format!("job {} is not a probe job", q.probe_job)));
    };
    if job.dataset_id != id {
        return Err(ApiError::Invalid(format!("job {} belongs to dataset {}", job.id, job.dataset_id)));
    }
    let counts = cross_region_consistency(&report.sex_pairs()?)?;
    Ok(Json(ConsistencyReport::new(counts)?))
}
