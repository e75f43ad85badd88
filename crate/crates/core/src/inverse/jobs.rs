//! Background inverse jobs with a bounded worker pool and an LRU-capped
//! table of results.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{Notify, Semaphore};

use super::report::{render_report, InverseReport};
use super::{InverseError, ParameterSettings};
use crate::catalog::Catalog;
use crate::llm::LanguageModel;
use crate::pso::{self, PsoConfig};
use crate::surrogate::Surrogate;

pub const DEFAULT_JOB_CAPACITY: usize = 100;
pub const DEFAULT_MAX_CONCURRENT_JOBS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Queued,
    Running,
    Finished,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Finished | Self::Failed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProgress {
    pub iterations: usize,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseJob {
    pub job_id: String,
    pub status: JobStatus,
    pub settings: ParameterSettings,
    pub progress: JobProgress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<InverseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct Table {
    jobs: HashMap<String, InverseJob>,
    /// Least recently used first.
    order: VecDeque<String>,
}

impl Table {
    fn touch(&mut self, id: &str) {
        if let Some(pos) = self.order.iter().position(|j| j == id) {
            let id = self.order.remove(pos).expect("position is valid");
            self.order.push_back(id);
        }
    }

    /// Drops least recently used finished or failed jobs above capacity.
    /// Live jobs are never evicted.
    fn evict(&mut self, capacity: usize) {
        while self.jobs.len() > capacity {
            let Some(pos) = self.order.iter().position(|id| self.jobs[id].status.is_terminal()) else {
                break;
            };
            let id = self.order.remove(pos).expect("position is valid");
            self.jobs.remove(&id);
        }
    }
}

struct Inner {
    table: Mutex<Table>,
    changed: Notify,
    permits: Arc<Semaphore>,
    capacity: usize,
    catalog: Arc<Catalog>,
    surrogate: Arc<Surrogate>,
    llm: Option<Arc<dyn LanguageModel>>,
    pso: PsoConfig,
}

impl Inner {
    fn update(&self, id: &str, f: impl FnOnce(&mut InverseJob)) {
        let mut table = self.table.lock().expect("job table poisoned");
        if let Some(job) = table.jobs.get_mut(id) {
            f(job);
        }
        drop(table);
        self.changed.notify_waiters();
    }
}

/// Cheap to clone; all clones share one job table.
#[derive(Clone)]
pub struct JobManager {
    inner: Arc<Inner>,
}

impl JobManager {
    pub fn new(
        catalog: Arc<Catalog>,
        surrogate: Arc<Surrogate>,
        llm: Option<Arc<dyn LanguageModel>>,
        pso: PsoConfig,
        max_concurrent: usize,
        capacity: usize,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                table: Mutex::new(Table::default()),
                changed: Notify::new(),
                permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
                capacity: capacity.max(1),
                catalog,
                surrogate,
                llm,
                pso,
            }),
        }
    }

    pub fn pso_config(&self) -> &PsoConfig {
        &self.inner.pso
    }

    /// Validates and queues a job. Must be called inside a tokio runtime.
    pub fn submit(&self, settings: ParameterSettings) -> Result<String, InverseError> {
        let space = settings.validate(&self.inner.catalog, &self.inner.surrogate)?;
        let job_id = uuid::Uuid::new_v4().simple().to_string();
        let job = InverseJob {
            job_id: job_id.clone(),
            status: JobStatus::Queued,
            settings,
            progress: JobProgress { iterations: 0, max_iterations: self.inner.pso.max_iters },
            result: None,
            error: None,
        };
        {
            let mut table = self.inner.table.lock().expect("job table poisoned");
            table.jobs.insert(job_id.clone(), job);
            table.order.push_back(job_id.clone());
            table.evict(self.inner.capacity);
        }

        let inner = Arc::clone(&self.inner);
        let id = job_id.clone();
        tokio::spawn(async move {
            let _permit = Arc::clone(&inner.permits).acquire_owned().await.expect("semaphore never closes");
            inner.update(&id, |j| j.status = JobStatus::Running);

            let worker = Arc::clone(&inner);
            let wid = id.clone();
            let solved = tokio::task::spawn_blocking(move || {
                let progress = |it: usize, max: usize, _best: f64| {
                    worker.update(&wid, |j| j.progress = JobProgress { iterations: it, max_iterations: max });
                };
                pso::optimize(&space, &worker.surrogate, &worker.pso, Some(&progress))
            })
            .await;

            match solved {
                Ok(Ok(solution)) => {
                    let report = render_report(&solution, &inner.catalog, inner.llm.as_deref()).await;
                    inner.update(&id, |j| {
                        j.progress.iterations = solution.iterations_used;
                        j.result = Some(report);
                        j.status = JobStatus::Finished;
                    });
                }
                Ok(Err(e)) => inner.update(&id, |j| {
                    j.error = Some(e.to_string());
                    j.status = JobStatus::Failed;
                }),
                Err(e) => inner.update(&id, |j| {
                    j.error = Some(format!("search task aborted: {e}"));
                    j.status = JobStatus::Failed;
                }),
            }
        });
        Ok(job_id)
    }

    /// Snapshot of a job. Counts as a use for eviction order.
    pub fn poll(&self, job_id: &str) -> Result<InverseJob, InverseError> {
        let mut table = self.inner.table.lock().expect("job table poisoned");
        let job = table.jobs.get(job_id).cloned().ok_or_else(|| InverseError::UnknownJob(job_id.to_string()))?;
        table.touch(job_id);
        Ok(job)
    }

    pub fn len(&self) -> usize {
        self.inner.table.lock().expect("job table poisoned").jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Waits until the job is finished or failed, or `timeout` elapses.
    pub async fn wait(&self, job_id: &str, timeout: Duration) -> Result<InverseJob, InverseError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = self.inner.changed.notified();
            let job = self.poll(job_id)?;
            if job.status.is_terminal() {
                return Ok(job);
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return self.poll(job_id);
            }
        }
    }
}
