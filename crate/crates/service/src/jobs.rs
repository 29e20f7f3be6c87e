use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use embaudit_core::probes::{LagReport, ProbeReport};
use embaudit_core::tsne::DatasetLayout;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::state::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Tsne,
    Probe,
    Lag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Canceled,
}

impl JobState {
    pub fn is_final(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Canceled)
    }

    fn can_move_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done | JobState::Failed | JobState::Canceled)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JobProgress {
    pub current: usize,
    pub total: usize,
    /// Latest KL divergence, t-SNE only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub id: String,
    pub kind: JobKind,
    pub dataset_id: String,
    pub state: JobState,
    pub progress: JobProgress,
    pub cancel_requested: bool,
    /// Path of the result, present iff the job is done.
    pub result: Option<String>,
    pub error: Option<String>,
}

pub(crate) enum JobOutput {
    Tsne(DatasetLayout),
    Probe(ProbeReport),
    Lag(LagReport),
}

struct Status {
    state: JobState,
    progress: JobProgress,
    error: Option<String>,
}

pub(crate) struct Job {
    pub id: String,
    pub kind: JobKind,
    pub dataset_id: String,
    /// Submission order, used to find the latest layout.
    pub seq: u64,
    cache_key: String,
    status: Mutex<Status>,
    cancel: AtomicBool,
    output: OnceLock<JobOutput>,
}

impl Job {
    pub fn snapshot(&self) -> JobSnapshot {
        let s = self.status.lock().expect("job status lock");
        JobSnapshot {
            id: self.id.clone(),
            kind: self.kind,
            dataset_id: self.dataset_id.clone(),
            state: s.state,
            progress: s.progress,
            cancel_requested: self.cancel_requested(),
            result: (s.state == JobState::Done).then(|| format!("/jobs/{}/result", self.id)),
            error: s.error.clone(),
        }
    }

    pub fn state(&self) -> JobState {
        self.status.lock().expect("job status lock").state
    }

    pub fn cancel_requested(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    pub fn request_cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    /// Output of a finished job.
    pub fn output(&self) -> Option<&JobOutput> {
        self.output.get()
    }

    pub fn set_progress(&self, progress: JobProgress) {
        self.status.lock().expect("job status lock").progress = progress;
    }

    fn transition(&self, next: JobState, error: Option<String>) {
        let mut s = self.status.lock().expect("job status lock");
        debug_assert!(s.state.can_move_to(next), "{:?} -> {:?}", s.state, next);
        if s.state.can_move_to(next) {
            s.state = next;
            s.error = error;
        }
    }
}

/// Content address of a job: kind, dataset and canonical parameters.
pub(crate) fn cache_key(kind: JobKind, dataset_id: &str, params: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(kind, dataset_id, params)).expect("serializable key"));
    format!("{:x}", h.finalize())
}

type Work = Box<dyn FnOnce(&Job) -> embaudit_core::Result<JobOutput> + Send>;

impl AppState {
    /// Returns the id of a cached live job for `key`, or queues `work` as a new one.
    pub(crate) fn submit(&self, kind: JobKind, dataset_id: &str, key: String, work: Work) -> (String, bool) {
        let mut cache = self.0.cache.lock().expect("cache lock");
        if let Some(existing) = cache.get(&key).and_then(|id| self.job(id).ok()) {
            if !matches!(existing.state(), JobState::Failed | JobState::Canceled) {
                return (existing.id.clone(), true);
            }
        }
        let seq = self.next_id();
        let job = Arc::new(Job {
            id: format!("job-{seq}"),
            kind,
            dataset_id: dataset_id.to_string(),
            seq,
            cache_key: key.clone(),
            status: Mutex::new(Status { state: JobState::Queued, progress: JobProgress::default(), error: None }),
            cancel: AtomicBool::new(false),
            output: OnceLock::new(),
        });
        cache.insert(key, job.id.clone());
        drop(cache);
        self.0.jobs.write().expect("job lock").insert(job.id.clone(), job.clone());
        let id = job.id.clone();
        tokio::spawn(run(self.clone(), job, work));
        (id, false)
    }

    fn forget_cached(&self, job: &Job) {
        let mut cache = self.0.cache.lock().expect("cache lock");
        if cache.get(&job.cache_key) == Some(&job.id) {
            cache.remove(&job.cache_key);
        }
    }
}

async fn run(state: AppState, job: Arc<Job>, work: Work) {
    let Ok(_permit) = state.0.slots.clone().acquire_owned().await else {
        return;
    };
    job.transition(JobState::Running, None);
    if job.cancel_requested() {
        job.transition(JobState::Canceled, None);
        state.forget_cached(&job);
        return;
    }
    let worker = job.clone();
    let outcome = tokio::task::spawn_blocking(move || work(&worker)).await;
    match outcome {
        Ok(Ok(_)) | Ok(Err(embaudit_core::Error::Canceled)) if job.cancel_requested() => {
            job.transition(JobState::Canceled, None);
            state.forget_cached(&job);
        }
        Ok(Ok(out)) => {
            if let (Some(dir), JobOutput::Tsne(layout)) = (&state.0.config.data_dir, &out) {
                if let Err(e) = persist_layout(dir, &job.id, layout) {
                    job.transition(JobState::Failed, Some(e.to_string()));
                    state.forget_cached(&job);
                    return;
                }
            }
            let _ = job.output.set(out);
            job.transition(JobState::Done, None);
        }
        Ok(Err(e)) => {
            job.transition(JobState::Failed, Some(e.to_string()));
            state.forget_cached(&job);
        }
        Err(panic) => {
            job.transition(JobState::Failed, Some(format!("worker panicked: {panic}")));
            state.forget_cached(&job);
        }
    }
}

fn persist_layout(dir: &std::path::Path, job_id: &str, layout: &DatasetLayout) -> embaudit_core::Result<()> {
    let dir = dir.join("jobs").join(job_id);
    std::fs::create_dir_all(&dir)?;
    embaudit_core::tsne::write_layout_csv(std::fs::File::create(dir.join("layout.csv"))?, &layout.points)?;
    embaudit_core::tsne::write_kl_trace_csv(std::fs::File::create(dir.join("kl_trace.csv"))?, &layout.kl_trace)
}
