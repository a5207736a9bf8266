use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use alqa_core::acquisition::StrategyKind;
use alqa_core::classifier::{Prediction, TrainedModel};
use alqa_core::data_model::{image_path, Annotation, AnnotationEvent, Label, PerspectiveId, RecordRef};
use alqa_core::orchestrator::{self, LearningCurve, SeedState};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, ServiceError, ServiceResult};
use crate::model::{DefectTicket, Event, ImageRef, LabelTask, Resolution, RunRecord, RunState, TaskState, TicketQueue};
use crate::store::{RunLog, EVENTS_FILE};

pub const CURVES_FILE: &str = "curves.csv";

struct RunHandle {
    log: RunLog,
    state: RunState,
}

/// Run registry, labeling queue and defect queue over a directory of runs.
pub struct Service {
    root: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<Mutex<RunHandle>>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRun {
    #[serde(default)]
    pub run_id: Option<String>,
    pub perspective: PerspectiveId,
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub config: serde_json::Value,
    pub pool: BTreeSet<String>,
    #[serde(default)]
    pub held_out: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub pending: usize,
    pub labeled: usize,
    pub ambiguous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProgress {
    pub seed: u64,
    pub round: Option<usize>,
    pub labeled_count: Option<usize>,
    pub finished: bool,
    pub awaiting_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub created_at: chrono::DateTime<Utc>,
    pub perspective: PerspectiveId,
    pub config: serde_json::Value,
    pub pool_size: usize,
    pub held_out_size: usize,
    pub tasks: TaskCounts,
    pub open_tickets: usize,
    pub progress: Vec<SeedProgress>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    /// Also queue Correct predictions whose uncertainty exceeds this.
    #[serde(default)]
    pub uncertain_cutoff: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskFilter {
    pub state: Option<TaskState>,
    pub run: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TicketFilter {
    pub resolution: Option<Resolution>,
    pub queue: Option<TicketQueue>,
    pub run: Option<String>,
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Run ids are the prefix of task and ticket ids up to the last `-`.
fn run_of(id: &str) -> Option<&str> {
    id.rsplit_once('-').map(|(run, _)| run)
}

impl Service {
    /// Loads every run directory under `root` that holds an event log.
    pub fn open(root: &Path) -> ServiceResult<Self> {
        fs::create_dir_all(root).map_err(io_at(root))?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(root).map_err(io_at(root))? {
            let dir = entry.map_err(io_at(root))?.path();
            if dir.join(EVENTS_FILE).is_file() {
                let (log, state) = RunLog::open(&dir)?;
                runs.insert(state.run.run_id.clone(), Arc::new(Mutex::new(RunHandle { log, state })));
            }
        }
        Ok(Service {
            root: root.to_owned(),
            runs: RwLock::new(runs),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn handle(&self, run_id: &str) -> ServiceResult<Arc<Mutex<RunHandle>>> {
        self.runs
            .read()
            .expect("registry lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("run `{run_id}`")))
    }

    fn with_run<T>(&self, run_id: &str, f: impl FnOnce(&mut RunHandle) -> ServiceResult<T>) -> ServiceResult<T> {
        let h = self.handle(run_id)?;
        let mut guard = h.lock().expect("run lock");
        f(&mut guard)
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.read().expect("registry lock").keys().cloned().collect()
    }

    pub fn create_run(&self, req: CreateRun) -> ServiceResult<RunSummary> {
        let run_id = req
            .run_id
            .unwrap_or_else(|| format!("run-{}", Utc::now().format("%Y%m%dT%H%M%S%3f")));
        if !valid_run_id(&run_id) {
            return Err(ServiceError::BadRequest(format!("invalid run id `{run_id}`")));
        }
        if let Some(id) = req.pool.intersection(&req.held_out).next() {
            return Err(ServiceError::Leakage(id.clone()));
        }
        let mut runs = self.runs.write().expect("registry lock");
        if runs.contains_key(&run_id) {
            return Err(ServiceError::Conflict(format!("run `{run_id}` already exists")));
        }
        let run = RunRecord {
            run_id: run_id.clone(),
            created_at: Utc::now(),
            perspective: req.perspective,
            dataset_dir: req.dataset_dir,
            config: req.config,
            pool: req.pool,
            held_out: req.held_out,
        };
        let (log, state) = RunLog::create(&self.run_dir(&run_id), Event::RunCreated { run })?;
        runs.insert(run_id.clone(), Arc::new(Mutex::new(RunHandle { log, state })));
        drop(runs);
        self.run_summary(&run_id)
    }

    pub fn run_state(&self, run_id: &str) -> ServiceResult<RunState> {
        self.with_run(run_id, |h| Ok(h.state.clone()))
    }

    pub fn run_summary(&self, run_id: &str) -> ServiceResult<RunSummary> {
        let (run, tasks, open_tickets) = self.with_run(run_id, |h| {
            let mut c = TaskCounts::default();
            for t in h.state.tasks.values() {
                match t.state {
                    TaskState::Pending => c.pending += 1,
                    TaskState::Labeled => c.labeled += 1,
                    TaskState::Ambiguous => c.ambiguous += 1,
                }
            }
            let open = h.state.tickets.values().filter(|t| t.resolution == Resolution::Open).count();
            Ok((h.state.run.clone(), c, open))
        })?;
        Ok(RunSummary {
            run_id: run.run_id.clone(),
            created_at: run.created_at,
            perspective: run.perspective,
            config: run.config.clone(),
            pool_size: run.pool.len(),
            held_out_size: run.held_out.len(),
            tasks,
            open_tickets,
            progress: self.seed_states(run_id)?.iter().map(progress).collect(),
        })
    }

    fn seed_states(&self, run_id: &str) -> ServiceResult<Vec<SeedState>> {
        let dir = self.run_dir(run_id);
        let mut seeds = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
            let name = entry.map_err(io_at(&dir))?.file_name();
            let name = name.to_string_lossy();
            if let Some(seed) = name.strip_prefix("state_seed").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(seed) = seed.parse::<u64>() {
                    if let Some(s) = SeedState::load(&dir, seed)? {
                        seeds.push(s);
                    }
                }
            }
        }
        seeds.sort_by_key(|s| s.seed);
        Ok(seeds)
    }

    /// Learning curves of a run: the written CSV when present, otherwise the
    /// live per-seed progress files.
    pub fn curves(&self, run_id: &str) -> ServiceResult<Vec<LearningCurve>> {
        let run = self.with_run(run_id, |h| Ok(h.state.run.clone()))?;
        let csv = self.run_dir(run_id).join(CURVES_FILE);
        if csv.is_file() {
            let text = fs::read_to_string(&csv).map_err(io_at(&csv))?;
            return Ok(orchestrator::curves_from_csv(&text)?);
        }
        let strategy = run
            .config
            .pointer("/strategy/kind")
            .and_then(|v| serde_json::from_value::<StrategyKind>(v.clone()).ok())
            .unwrap_or(StrategyKind::DealUncertainty);
        Ok(self
            .seed_states(run_id)?
            .into_iter()
            .map(|s| LearningCurve {
                strategy,
                seed: s.seed,
                checkpoints: s.checkpoints,
            })
            .collect())
    }

    /// One pending task per id; ids that already have a task return it.
    pub fn enqueue_batch(&self, run_id: &str, image_ids: &[String]) -> ServiceResult<Vec<LabelTask>> {
        self.with_run(run_id, |h| {
            let run = &h.state.run;
            for id in image_ids {
                if run.held_out.contains(id) {
                    return Err(ServiceError::Leakage(id.clone()));
                }
                if !run.pool.contains(id) {
                    return Err(ServiceError::NotFound(format!("image `{id}` in run `{run_id}`")));
                }
            }
            let mut out = Vec::with_capacity(image_ids.len());
            for id in image_ids {
                if let Some(tid) = h.state.task_by_image.get(id) {
                    out.push(h.state.tasks[tid].clone());
                    continue;
                }
                let task = LabelTask {
                    task_id: h.state.next_task_id(),
                    image: ImageRef {
                        run_id: run_id.to_owned(),
                        image_id: id.clone(),
                        perspective: h.state.run.perspective,
                    },
                    state: TaskState::Pending,
                    result: None,
                    created_at: Utc::now(),
                };
                h.log.append(&mut h.state, Event::TaskEnqueued { task: task.clone() })?;
                out.push(task);
            }
            Ok(out)
        })
    }

    pub fn tasks(&self, filter: &TaskFilter) -> ServiceResult<Vec<LabelTask>> {
        let ids = match &filter.run {
            Some(r) => vec![r.clone()],
            None => self.run_ids(),
        };
        let mut out = Vec::new();
        for id in ids {
            self.with_run(&id, |h| {
                out.extend(
                    h.state
                        .tasks
                        .values()
                        .filter(|t| filter.state.is_none_or(|s| t.state == s))
                        .cloned(),
                );
                Ok(())
            })?;
        }
        Ok(out)
    }

    pub fn submit_label(&self, task_id: &str, label: Annotation, annotator: &str, duration_s: f64) -> ServiceResult<LabelTask> {
        let run_id = run_of(task_id).ok_or_else(|| ServiceError::NotFound(format!("task `{task_id}`")))?;
        let h = self
            .handle(run_id)
            .map_err(|_| ServiceError::NotFound(format!("task `{task_id}`")))?;
        let mut h = h.lock().expect("run lock");
        let image_id = h
            .state
            .tasks
            .get(task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("task `{task_id}`")))?
            .image
            .image_id
            .clone();
        let result = AnnotationEvent::new(&image_id, annotator, label, duration_s)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let h = &mut *h;
        h.log.append(
            &mut h.state,
            Event::LabelSubmitted {
                task_id: task_id.to_owned(),
                result,
            },
        )?;
        Ok(h.state.tasks[task_id].clone())
    }

    /// Opens one ticket per Defective prediction, plus uncertain-queue
    /// tickets when a cutoff is set.
    pub fn forward_predictions(
        &self,
        run_id: &str,
        predictions: &[(String, Prediction)],
        opts: ForwardOptions,
    ) -> ServiceResult<Vec<DefectTicket>> {
        self.with_run(run_id, |h| {
            let mut out = Vec::new();
            for (image_id, p) in predictions {
                let queue = match p.label {
                    Label::Defective => TicketQueue::Defect,
                    Label::Correct if opts.uncertain_cutoff.is_some_and(|c| p.uncertainty > c) => TicketQueue::Uncertain,
                    Label::Correct => continue,
                };
                let ticket = DefectTicket {
                    ticket_id: h.state.next_ticket_id(),
                    image: ImageRef {
                        run_id: run_id.to_owned(),
                        image_id: image_id.clone(),
                        perspective: h.state.run.perspective,
                    },
                    predicted_label: p.label,
                    uncertainty: p.uncertainty,
                    p_defective: p.p_defective,
                    queue,
                    created_at: Utc::now(),
                    resolution: Resolution::Open,
                    resolver: None,
                    resolved_at: None,
                };
                h.log.append(&mut h.state, Event::TicketForwarded { ticket: ticket.clone() })?;
                out.push(ticket);
            }
            Ok(out)
        })
    }

    pub fn forward_defects(
        &self,
        run_id: &str,
        model: &TrainedModel,
        inference_set: &[RecordRef],
        opts: ForwardOptions,
    ) -> ServiceResult<Vec<DefectTicket>> {
        let preds = model.predict(inference_set)?;
        let pairs: Vec<(String, Prediction)> = inference_set.iter().map(|r| r.id.clone()).zip(preds).collect();
        self.forward_predictions(run_id, &pairs, opts)
    }

    /// Tickets sorted by descending uncertainty, then ticket id.
    pub fn tickets(&self, filter: &TicketFilter) -> ServiceResult<Vec<DefectTicket>> {
        let ids = match &filter.run {
            Some(r) => vec![r.clone()],
            None => self.run_ids(),
        };
        let mut out = Vec::new();
        for id in ids {
            self.with_run(&id, |h| {
                out.extend(
                    h.state
                        .tickets
                        .values()
                        .filter(|t| filter.resolution.is_none_or(|r| t.resolution == r))
                        .filter(|t| filter.queue.is_none_or(|q| t.queue == q))
                        .cloned(),
                );
                Ok(())
            })?;
        }
        out.sort_by(|a, b| b.uncertainty.total_cmp(&a.uncertainty).then_with(|| a.ticket_id.cmp(&b.ticket_id)));
        Ok(out)
    }

    pub fn resolve_ticket(&self, ticket_id: &str, resolution: Resolution, resolver: &str) -> ServiceResult<DefectTicket> {
        let run_id = run_of(ticket_id).ok_or_else(|| ServiceError::NotFound(format!("ticket `{ticket_id}`")))?;
        let h = self
            .handle(run_id)
            .map_err(|_| ServiceError::NotFound(format!("ticket `{ticket_id}`")))?;
        let mut h = h.lock().expect("run lock");
        let h = &mut *h;
        h.log.append(
            &mut h.state,
            Event::TicketResolved {
                ticket_id: ticket_id.to_owned(),
                resolution,
                resolver: resolver.to_owned(),
                at: Utc::now(),
            },
        )?;
        Ok(h.state.tickets[ticket_id].clone())
    }

    /// PNG path of a run image, if the run is bound to a dataset.
    pub fn image_file(&self, run_id: &str, image_id: &str) -> ServiceResult<PathBuf> {
        let run = self.with_run(run_id, |h| Ok(h.state.run.clone()))?;
        if !run.pool.contains(image_id) && !run.held_out.contains(image_id) {
            return Err(ServiceError::NotFound(format!("image `{image_id}`")));
        }
        let root = run
            .dataset_dir
            .ok_or_else(|| ServiceError::NotFound(format!("run `{run_id}` has no dataset directory")))?;
        Ok(image_path(&root, run.perspective, image_id))
    }
}

fn progress(s: &SeedState) -> SeedProgress {
    let last = s.checkpoints.last();
    SeedProgress {
        seed: s.seed,
        round: last.map(|c| c.round),
        labeled_count: last.map(|c| c.labeled_count),
        finished: s.finished,
        awaiting_labels: s.pending.as_ref().map_or(0, Vec::len),
    }
}
