use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use embaudit_core::cluster_tools::{assign_clusters, Polygon};
use embaudit_core::data_model::{write_emb1, write_metadata_csv, Dataset};
use embaudit_core::image_analysis::write_pgm;
use embaudit_core::synth::{generate_embeddings, NeckImageSpec, SynthEmbeddingSpec};
use embaudit_core::tsne::LayoutPoint;
use embaudit_service::{router, AppState, JobSnapshot, JobState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "embaudit-test-boundary";

struct Part<'a> {
    name: &'a str,
    file: Option<&'a str>,
    bytes: Vec<u8>,
}

fn multipart(parts: &[Part]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{}\"", p.name).as_bytes());
        if let Some(f) = p.file {
            body.extend_from_slice(format!("; filename=\"{f}\"").as_bytes());
        }
        body.extend_from_slice(b"\r\nContent-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(&p.bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

struct Api {
    app: Router,
}

impl Api {
    fn new(max_concurrent_jobs: usize) -> Self {
        let state = AppState::new(ServiceConfig { max_concurrent_jobs, ..Default::default() });
        Api { app: router(state) }
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let (status, bytes) = self.send(req.body(body).unwrap()).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn upload(&self, uri: &str, parts: &[Part<'_>]) -> (StatusCode, Value) {
        let req = Request::post(uri)
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart(parts)))
            .unwrap();
        let (status, bytes) = self.send(req).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn upload_dataset(&self, ds: &Dataset) -> String {
        let (status, v) = self.upload("/datasets", &dataset_parts(ds)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["dataset_id"].as_str().unwrap().to_string()
    }

    async fn snapshot(&self, job: &str) -> JobSnapshot {
        let (status, v) = self.json(Method::GET, &format!("/jobs/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_value(v).unwrap()
    }

    async fn wait(&self, job: &str) -> JobSnapshot {
        for _ in 0..6000 {
            let snap = self.snapshot(job).await;
            if snap.state.is_final() {
                return snap;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("job {job} did not finish");
    }

    async fn wait_for(&self, job: &str, state: JobState) {
        for _ in 0..6000 {
            if self.snapshot(job).await.state == state {
                return;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("job {job} never reached {state:?}");
    }

    async fn submit(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.json(Method::POST, uri, Some(body)).await
    }
}

fn dataset_parts(ds: &Dataset) -> Vec<Part<'static>> {
    let mut emb = Vec::new();
    write_emb1(&mut emb, &ds.to_table()).unwrap();
    let mut meta = Vec::new();
    write_metadata_csv(&mut meta, ds.metadata().values()).unwrap();
    vec![
        Part { name: "embeddings", file: Some("emb.bin"), bytes: emb },
        Part { name: "metadata", file: Some("meta.csv"), bytes: meta },
    ]
}

fn fixture(n_subjects: usize, flipped_fraction: f64) -> Dataset {
    let spec = SynthEmbeddingSpec { n_subjects, dim: 16, flipped_fraction, seed: 3, ..Default::default() };
    generate_embeddings(&spec).unwrap().dataset
}

fn job_id(v: &Value) -> String {
    v["job_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn dataset_upload_and_summary() {
    let api = Api::new(2);
    let ds = fixture(40, 0.0);
    let id = api.upload_dataset(&ds).await;

    let (status, v) = api.json(Method::GET, &format!("/datasets/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["n_records"], 120);
    assert_eq!(v["n_subjects"], 40);
    assert_eq!(v["dim"], 16);
    assert_eq!(v["metadata_coverage"]["sex"], 40);
    assert_eq!(v["records_per_region"]["lumbar"], 40);

    // same content, same id
    let (status, again) = api.upload("/datasets", &dataset_parts(&ds)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["dataset_id"], id.as_str());

    let (status, v) = api.json(Method::GET, "/datasets/ds-nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("ds-nope"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn upload_reports_subjects_without_metadata() {
    let api = Api::new(2);
    let ds = fixture(5, 0.0);
    let mut parts = dataset_parts(&ds);
    let dropped = ds.subject_ids().next().unwrap().to_string();
    let mut meta = Vec::new();
    write_metadata_csv(&mut meta, ds.metadata().values().filter(|m| m.subject_id != dropped)).unwrap();
    parts[1].bytes = meta;
    let (status, v) = api.upload("/datasets", &parts).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["rejected_subjects"], json!([dropped]));
    assert_eq!(v["rejected_records"], 3);
    assert_eq!(v["n_records"], 12);

    let (status, v) = api.upload("/datasets", &parts[..1]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("metadata"));

    parts[0].bytes = b"garbage".to_vec();
    let (status, _) = api.upload("/datasets", &parts).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn tsne_job_lifecycle_and_cache() {
    let api = Api::new(2);
    let ds = fixture(30, 0.0);
    let id = api.upload_dataset(&ds).await;
    let params = json!({ "perplexity": 10.0, "iterations": 300, "seed": 1 });

    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), params.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = job_id(&v);
    let first = api.snapshot(&job).await;
    assert!(matches!(first.state, JobState::Queued | JobState::Running | JobState::Done));

    let done = api.wait(&job).await;
    assert_eq!(done.state, JobState::Done);
    assert_eq!(done.result.as_deref(), Some(format!("/jobs/{job}/result").as_str()));
    assert_eq!((done.progress.current, done.progress.total), (300, 300));
    assert!(done.progress.kl.is_some());

    let (status, pts) = api.json(Method::GET, &format!("/jobs/{job}/layout"), None).await;
    assert_eq!(status, StatusCode::OK);
    let pts: Vec<LayoutPoint> = serde_json::from_value(pts).unwrap();
    assert_eq!(pts.len(), 90);

    let (status, csv) = api.send(Request::get(format!("/jobs/{job}/layout?format=csv")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(csv).unwrap().starts_with("subject_id,region,x,y"));

    let (_, result) = api.json(Method::GET, &format!("/jobs/{job}/result"), None).await;
    assert_eq!(result["kl_trace"].as_array().unwrap().len(), 300);

    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), params).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "job_id": job, "cached": true }));

    let (status, _) = api.json(Method::DELETE, &format!("/jobs/{job}"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn invalid_params_rejected_before_queuing() {
    let api = Api::new(2);
    let id = api.upload_dataset(&fixture(10, 0.0)).await;
    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), json!({ "perplexity": 30.0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("perplexity"), "{v}");

    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/probe"), json!({ "target": "sex", "C": 0.0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
    let (status, _) = api.submit(&format!("/datasets/{id}/jobs/probe"), json!({ "target": "shoe_size" })).await;
    assert!(status.is_client_error());
    let (status, _) = api.submit("/datasets/ds-missing/jobs/tsne", json!({})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // the only job ids handed out so far would be job-1..; none exist
    let (status, _) = api.json(Method::GET, "/jobs/job-1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cancel_running_job_discards_layout() {
    let api = Api::new(2);
    let id = api.upload_dataset(&fixture(60, 0.0)).await;
    let params = json!({ "perplexity": 10.0, "iterations": 1_000_000, "seed": 2 });
    let (_, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), params.clone()).await;
    let job = job_id(&v);
    api.wait_for(&job, JobState::Running).await;

    let (status, v) = api.json(Method::DELETE, &format!("/jobs/{job}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["cancel_requested"], true);
    let snap = api.wait(&job).await;
    assert_eq!(snap.state, JobState::Canceled);
    assert!(snap.result.is_none());

    let (status, _) = api.json(Method::GET, &format!("/jobs/{job}/layout"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // a canceled job is not served from the cache
    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), params).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let again = job_id(&v);
    assert_ne!(again, job);
    api.json(Method::DELETE, &format!("/jobs/{again}"), None).await;
    assert_eq!(api.wait(&again).await.state, JobState::Canceled);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn at_most_two_jobs_run_at_once() {
    let api = Api::new(2);
    let id = api.upload_dataset(&fixture(60, 0.0)).await;
    let mut jobs = Vec::new();
    for seed in 0..3 {
        let params = json!({ "perplexity": 10.0, "iterations": 1_000_000, "seed": seed });
        let (_, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), params).await;
        jobs.push(job_id(&v));
    }
    api.wait_for(&jobs[0], JobState::Running).await;
    api.wait_for(&jobs[1], JobState::Running).await;
    for _ in 0..20 {
        let mut running = 0;
        for j in &jobs {
            running += (api.snapshot(j).await.state == JobState::Running) as usize;
        }
        assert!(running <= 2);
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert_eq!(api.snapshot(&jobs[2]).await.state, JobState::Queued);

    // cancelling a queued job takes effect once it reaches a worker
    for j in &jobs {
        api.json(Method::DELETE, &format!("/jobs/{j}"), None).await;
    }
    for j in &jobs {
        assert_eq!(api.wait(j).await.state, JobState::Canceled);
    }
}

async fn finished_layout(api: &Api, id: &str) -> (String, Vec<LayoutPoint>) {
    let (_, v) = api.submit(&format!("/datasets/{id}/jobs/tsne"), json!({ "perplexity": 10.0, "iterations": 250, "seed": 4 })).await;
    let job = job_id(&v);
    assert_eq!(api.wait(&job).await.state, JobState::Done);
    let (_, pts) = api.json(Method::GET, &format!("/jobs/{job}/layout"), None).await;
    (job, serde_json::from_value(pts).unwrap())
}

fn box_around(label: &str, pts: &[LayoutPoint], keep: impl Fn(&LayoutPoint) -> bool) -> Polygon {
    let sel: Vec<_> = pts.iter().filter(|p| keep(p)).collect();
    let (x0, x1) = sel.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (y0, y1) = sel.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.y), b.max(p.y)));
    Polygon { label: label.into(), vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cluster_labels_are_versioned() {
    let api = Api::new(2);
    let id = api.upload_dataset(&fixture(40, 0.0)).await;
    let uri = format!("/datasets/{id}/clusters");

    let (status, v) = api.json(Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["version"], 0);

    let poly = json!([{ "label": "a", "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] }]);
    let (status, _) = api.json(Method::PUT, &uri, Some(json!({ "version": 0, "polygons": poly }))).await;
    assert_eq!(status, StatusCode::CONFLICT, "no layout yet");

    let (layout_job, pts) = finished_layout(&api, &id).await;
    let polygons = vec![box_around("upper", &pts, |p| p.y > 0.0), box_around("left", &pts, |p| p.x < 0.0)];
    let expected = assign_clusters(&pts, &polygons).unwrap();

    let (status, v) = api.json(Method::PUT, &uri, Some(json!({ "version": 0, "polygons": polygons }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 1);
    assert_eq!(v["layout_job"], layout_job.as_str());
    let assigned = v["assignment"].as_array().unwrap();
    assert_eq!(assigned.len(), pts.len());
    for a in assigned {
        let key = format!("{}/{}", a["subject_id"].as_str().unwrap(), a["region"].as_str().unwrap());
        assert_eq!(expected.label(&key.parse().unwrap()), a["label"].as_str());
    }

    // an edit based on version 0 is stale now
    let (status, v) = api.json(Method::PUT, &uri, Some(json!({ "version": 0, "polygons": [] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("stale"));
    let (_, v) = api.json(Method::GET, &uri, None).await;
    assert_eq!(v["version"], 1);
    assert_eq!(v["polygons"].as_array().unwrap().len(), 2);

    let bad = json!([{ "label": "rest", "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] }]);
    let (status, _) = api.json(Method::PUT, &uri, Some(json!({ "version": 1, "polygons": bad }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn probe_lag_and_bias_endpoints() {
    let api = Api::new(2);
    let ds = fixture(200, 0.05);
    let id = api.upload_dataset(&ds).await;
    let (_, pts) = finished_layout(&api, &id).await;
    let polygons = vec![box_around("upper", &pts, |p| p.y > 0.0)];
    let (status, _) =
        api.json(Method::PUT, &format!("/datasets/{id}/clusters"), Some(json!({ "version": 0, "polygons": polygons }))).await;
    assert_eq!(status, StatusCode::OK);

    let (status, v) = api
        .submit(&format!("/datasets/{id}/jobs/probe"), json!({ "target": "sex", "kernel": { "type": "linear" }, "C": 1.0, "seed": 3 }))
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let probe = job_id(&v);
    assert_eq!(api.wait(&probe).await.state, JobState::Done);
    let (_, report) = api.json(Method::GET, &format!("/jobs/{probe}/result"), None).await;
    assert_eq!(report["target"], "sex");
    let groups = report["test"]["per_group"].as_object().unwrap();
    assert!(groups.contains_key("upper") || groups.contains_key("rest"));
    assert!(report["all"]["accuracy"].as_f64().unwrap() > 0.8);

    let (status, bias) = api.json(Method::GET, &format!("/datasets/{id}/bias/regions?probe_job={probe}"), None).await;
    assert_eq!(status, StatusCode::OK, "{bias}");
    assert_eq!(bias["expected"].as_array().unwrap().len(), 4);
    let k: u64 = bias["counts"]["exactly_k"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(k, bias["counts"]["n_subjects"].as_u64().unwrap());

    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/lag"), json!({ "subgroup": { "cluster": "upper" }, "epochs": 10 })).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    let lag = job_id(&v);
    assert_eq!(api.wait(&lag).await.state, JobState::Done);
    let (_, report) = api.json(Method::GET, &format!("/jobs/{lag}/result"), None).await;
    assert_eq!(report["epochs"].as_array().unwrap().len(), 10);

    let first = ds.subject_ids().next().unwrap().to_string();
    let ids = json!({ "subgroup": [first.clone(), format!("{}/lumbar", ds.subject_ids().nth(1).unwrap())], "epochs": 5 });
    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/lag"), ids).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let lag2 = job_id(&v);
    assert_eq!(api.wait(&lag2).await.state, JobState::Done);
    let (_, report) = api.json(Method::GET, &format!("/jobs/{lag2}/result"), None).await;
    assert_eq!(report["subgroup"].as_array().unwrap().len(), 4);

    let (status, _) = api.json(Method::GET, &format!("/datasets/{id}/bias/regions?probe_job={lag}"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.submit(&format!("/datasets/{id}/jobs/lag"), json!({ "subgroup": [] })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let all: Vec<String> = ds.subject_ids().map(String::from).collect();
    let (status, _) = api.submit(&format!("/datasets/{id}/jobs/lag"), json!({ "subgroup": all })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.submit(&format!("/datasets/{id}/jobs/lag"), json!({ "subgroup": { "cluster": "nope" } })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn failed_job_leaves_dataset_untouched() {
    let api = Api::new(2);
    let spec = SynthEmbeddingSpec { n_subjects: 30, dim: 16, locations: vec!["Berlin".into()], seed: 5, ..Default::default() };
    let id = api.upload_dataset(&generate_embeddings(&spec).unwrap().dataset).await;
    let before = api.json(Method::GET, &format!("/datasets/{id}"), None).await;

    let (status, v) = api.submit(&format!("/datasets/{id}/jobs/probe"), json!({ "target": "location" })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = job_id(&v);
    let snap = api.wait(&job).await;
    assert_eq!(snap.state, JobState::Failed);
    assert!(snap.error.is_some());
    assert!(snap.result.is_none());
    let (status, _) = api.json(Method::GET, &format!("/jobs/{job}/result"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    assert_eq!(api.json(Method::GET, &format!("/datasets/{id}"), None).await, before);
    let (_, clusters) = api.json(Method::GET, &format!("/datasets/{id}/clusters"), None).await;
    assert_eq!(clusters["version"], 0);
}

fn pgm_bytes(spec: &NeckImageSpec, k: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    // stored intensities must be non-negative; the writer maps [-1, 1] onto 0..=maxval
    write_pgm(&mut buf, &spec.image(k).unwrap(), u16::MAX).unwrap();
    buf
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn imageset_edge_report() {
    let api = Api::new(2);
    let upper = NeckImageSpec { count: 30, noise_std: 0.02, seed: 1, ..Default::default() };
    let lower = NeckImageSpec { vertical_shift: 30, seed: 2, ..upper.clone() };
    let mut parts = Vec::new();
    for k in 0..upper.count {
        parts.push(Part { name: "image:upper", file: Some("u.pgm"), bytes: pgm_bytes(&upper, k) });
        parts.push(Part { name: "image:lower", file: Some("l.pgm"), bytes: pgm_bytes(&lower, k) });
    }
    // one RAWF32 image, unlabeled
    let img = upper.image(0).unwrap();
    let raw: Vec<u8> = img.pixels().iter().flat_map(|v| ((v + 1.0) / 2.0).to_le_bytes()).collect();
    parts.push(Part { name: "sidecar", file: None, bytes: br#"{"width":256,"height":256,"dtype":"f32le"}"#.to_vec() });
    parts.push(Part { name: "image", file: Some("x.raw"), bytes: raw });

    let (status, v) = api.upload("/imagesets", &parts).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["clusters"], json!({ "lower": 30, "upper": 30, "rest": 1 }));
    let id = v["imageset_id"].as_str().unwrap().to_string();

    let (status, report) =
        api.json(Method::GET, &format!("/imagesets/{id}/edge-report?clusters=upper,lower&spacing_mm=0.857"), None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    let pair = &report["shifts"][0];
    assert_eq!((pair["a"].as_str(), pair["b"].as_str()), (Some("upper"), Some("lower")));
    assert_eq!(pair["shift"], 30);
    assert!((pair["shift_mm"].as_f64().unwrap() - 25.71).abs() < 1e-9);
    assert_eq!(report["clusters"][0]["profile"].as_array().unwrap().len(), 256);

    let mean_uri = report["clusters"][0]["mean_image"].as_str().unwrap().to_string();
    let (status, pgm) = api.send(Request::get(mean_uri).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(pgm.starts_with(b"P5"));

    let (status, csv) =
        api.send(Request::get(format!("/imagesets/{id}/edge-report?format=csv")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(csv).unwrap().starts_with("row,lower,rest,upper"));

    let (status, _) = api.json(Method::GET, &format!("/imagesets/{id}/edge-report?clusters=nope"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = api.upload("/imagesets", &[Part { name: "image", file: Some("bad"), bytes: b"P5 2 2 255\n".to_vec() }]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
