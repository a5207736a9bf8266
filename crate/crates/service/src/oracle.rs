//! The human oracle: enqueue a batch, then poll until every task is terminal.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use alqa_core::data_model::Annotation;
use alqa_core::orchestrator::Oracle;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::model::{LabelTask, TaskState};
use crate::service::{CreateRun, Service, TaskFilter};

/// Where a human oracle sends batches and reads answers back.
pub trait LabelQueue {
    fn enqueue(&self, run_id: &str, image_ids: &[String]) -> ServiceResult<Vec<LabelTask>>;
    fn run_tasks(&self, run_id: &str) -> ServiceResult<Vec<LabelTask>>;
}

impl LabelQueue for Service {
    fn enqueue(&self, run_id: &str, image_ids: &[String]) -> ServiceResult<Vec<LabelTask>> {
        self.enqueue_batch(run_id, image_ids)
    }

    fn run_tasks(&self, run_id: &str) -> ServiceResult<Vec<LabelTask>> {
        self.tasks(&TaskFilter {
            state: None,
            run: Some(run_id.to_owned()),
        })
    }
}

impl<Q: LabelQueue + ?Sized> LabelQueue for Arc<Q> {
    fn enqueue(&self, run_id: &str, image_ids: &[String]) -> ServiceResult<Vec<LabelTask>> {
        (**self).enqueue(run_id, image_ids)
    }

    fn run_tasks(&self, run_id: &str) -> ServiceResult<Vec<LabelTask>> {
        (**self).run_tasks(run_id)
    }
}

/// Talks to a running service over its HTTP API.
pub struct HttpQueue {
    base: String,
}

#[derive(Serialize, Deserialize)]
pub struct EnqueueRequest {
    pub image_ids: Vec<String>,
}

impl HttpQueue {
    pub fn new(base_url: &str) -> Self {
        HttpQueue {
            base: base_url.trim_end_matches('/').to_owned(),
        }
    }

    /// Registers a run unless one with the same id already exists. Returns
    /// whether it was created.
    pub fn ensure_run(&self, req: &CreateRun) -> ServiceResult<bool> {
        match ureq::post(&format!("{}/runs", self.base)).send_json(req) {
            Ok(_) => Ok(true),
            Err(ureq::Error::StatusCode(409)) => Ok(false),
            Err(e) => Err(http_err(e)),
        }
    }
}

fn http_err(e: ureq::Error) -> ServiceError {
    ServiceError::Http(e.to_string())
}

impl LabelQueue for HttpQueue {
    fn enqueue(&self, run_id: &str, image_ids: &[String]) -> ServiceResult<Vec<LabelTask>> {
        ureq::post(&format!("{}/runs/{run_id}/tasks", self.base))
            .send_json(&EnqueueRequest {
                image_ids: image_ids.to_vec(),
            })
            .map_err(http_err)?
            .body_mut()
            .read_json()
            .map_err(http_err)
    }

    fn run_tasks(&self, run_id: &str) -> ServiceResult<Vec<LabelTask>> {
        ureq::get(&format!("{}/tasks", self.base))
            .query("run", run_id)
            .call()
            .map_err(http_err)?
            .body_mut()
            .read_json()
            .map_err(http_err)
    }
}

pub struct HumanOracle<Q> {
    queue: Q,
    run_id: String,
    timeout: Duration,
    poll: Duration,
}

impl<Q: LabelQueue> HumanOracle<Q> {
    pub fn new(queue: Q, run_id: &str, timeout: Duration, poll: Duration) -> Self {
        HumanOracle {
            queue,
            run_id: run_id.to_owned(),
            timeout,
            poll,
        }
    }

    /// Answers for `ids` if every one is terminal; otherwise the number
    /// still pending.
    fn collect(&self, ids: &[String]) -> ServiceResult<Result<BTreeMap<String, Annotation>, usize>> {
        let tasks = self.queue.run_tasks(&self.run_id)?;
        let by_image: BTreeMap<&str, &LabelTask> = tasks.iter().map(|t| (t.image.image_id.as_str(), t)).collect();
        let mut answers = BTreeMap::new();
        let mut pending = 0;
        for id in ids {
            match by_image.get(id.as_str()) {
                Some(t) if t.state != TaskState::Pending => {
                    let a = t.result.as_ref().map(|r| r.label).ok_or_else(|| {
                        ServiceError::Corrupt(format!("terminal task `{}` without a result", t.task_id))
                    })?;
                    answers.insert(id.clone(), a);
                }
                _ => pending += 1,
            }
        }
        Ok(if pending == 0 { Ok(answers) } else { Err(pending) })
    }
}

impl<Q: LabelQueue> Oracle for HumanOracle<Q> {
    fn label(&mut self, ids: &[String]) -> alqa_core::Result<BTreeMap<String, Annotation>> {
        let contract = |e: ServiceError| alqa_core::Error::Contract(e.to_string());
        self.queue.enqueue(&self.run_id, ids).map_err(contract)?;
        let start = Instant::now();
        loop {
            match self.collect(ids).map_err(contract)? {
                Ok(answers) => return Ok(answers),
                Err(pending) if start.elapsed() >= self.timeout => {
                    return Err(alqa_core::Error::OracleTimeout { pending });
                }
                Err(_) => thread::sleep(self.poll),
            }
        }
    }
}
