use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use embaudit_core::cluster_tools::{ClusterLabeling, Polygon};
use embaudit_core::data_model::{Dataset, IngestReport};
use tokio::sync::Semaphore;

use crate::error::{ApiError, ApiResult};
use crate::images::ImageSet;
use crate::jobs::Job;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Uploaded inputs and finished layouts are mirrored here when set.
    pub data_dir: Option<PathBuf>,
    pub max_concurrent_jobs: usize,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { data_dir: None, max_concurrent_jobs: 2, max_upload_bytes: 1 << 30 }
    }
}

pub(crate) struct StoredDataset {
    pub id: String,
    pub dataset: Dataset,
    pub report: IngestReport,
}

/// Current labeling of a dataset; `version` counts accepted edits.
#[derive(Clone, Default)]
pub(crate) struct ClusterState {
    pub version: u64,
    pub layout_job: Option<String>,
    pub polygons: Vec<Polygon>,
    pub labeling: Option<Arc<ClusterLabeling>>,
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub datasets: RwLock<BTreeMap<String, Arc<StoredDataset>>>,
    pub clusters: Mutex<BTreeMap<String, ClusterState>>,
    pub jobs: RwLock<BTreeMap<String, Arc<Job>>>,
    /// params hash → job id
    pub cache: Mutex<HashMap<String, String>>,
    pub imagesets: RwLock<BTreeMap<String, Arc<ImageSet>>>,
    pub slots: Arc<Semaphore>,
    next_id: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let slots = Arc::new(Semaphore::new(config.max_concurrent_jobs.max(1)));
        AppState(Arc::new(Inner {
            config,
            datasets: RwLock::default(),
            clusters: Mutex::default(),
            jobs: RwLock::default(),
            cache: Mutex::default(),
            imagesets: RwLock::default(),
            slots,
            next_id: AtomicU64::new(1),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub(crate) fn next_id(&self) -> u64 {
        self.0.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn dataset(&self, id: &str) -> ApiResult<Arc<StoredDataset>> {
        self.0
            .datasets
            .read()
            .expect("dataset lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("dataset {id}")))
    }

    pub(crate) fn job(&self, id: &str) -> ApiResult<Arc<Job>> {
        self.0.jobs.read().expect("job lock").get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("job {id}")))
    }

    pub(crate) fn cluster_state(&self, dataset_id: &str) -> ClusterState {
        self.0.clusters.lock().expect("cluster lock").get(dataset_id).cloned().unwrap_or_default()
    }
}
