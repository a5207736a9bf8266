use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use alqa_core::data_model::{AnnotationEvent, Label, PerspectiveId};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub run_id: String,
    pub image_id: String,
    pub perspective: PerspectiveId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Labeled,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTask {
    pub task_id: String,
    pub image: ImageRef,
    pub state: TaskState,
    pub result: Option<AnnotationEvent>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Open,
    Confirmed,
    FalseAlarm,
}

/// `Defect` holds predicted-defective images. `Uncertain` is the optional
/// second queue for confidently-correct-looking but uncertain predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketQueue {
    #[default]
    Defect,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectTicket {
    pub ticket_id: String,
    pub image: ImageRef,
    pub predicted_label: Label,
    pub uncertainty: f64,
    pub p_defective: f64,
    #[serde(default)]
    pub queue: TicketQueue,
    pub created_at: DateTime<Utc>,
    pub resolution: Resolution,
    pub resolver: Option<String>,
    pub resolved_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub perspective: PerspectiveId,
    /// Dataset root, for serving image PNGs.
    pub dataset_dir: Option<PathBuf>,
    pub config: serde_json::Value,
    /// Train-universe ids that may be queued for labeling.
    pub pool: BTreeSet<String>,
    /// Validation and test ids; never queued.
    pub held_out: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    RunCreated {
        run: RunRecord,
    },
    TaskEnqueued {
        task: LabelTask,
    },
    LabelSubmitted {
        task_id: String,
        result: AnnotationEvent,
    },
    TicketForwarded {
        ticket: DefectTicket,
    },
    TicketResolved {
        ticket_id: String,
        resolution: Resolution,
        resolver: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Everything the event log of one run determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub seq: u64,
    pub run: RunRecord,
    pub tasks: BTreeMap<String, LabelTask>,
    pub task_by_image: BTreeMap<String, String>,
    pub tickets: BTreeMap<String, DefectTicket>,
}

impl RunState {
    pub fn from_first(ev: &LoggedEvent) -> ServiceResult<Self> {
        match (&ev.event, ev.seq) {
            (Event::RunCreated { run }, 1) => Ok(RunState {
                seq: 1,
                run: run.clone(),
                tasks: BTreeMap::new(),
                task_by_image: BTreeMap::new(),
                tickets: BTreeMap::new(),
            }),
            _ => Err(ServiceError::Corrupt("log must start with run_created at seq 1".into())),
        }
    }

    pub fn next_task_id(&self) -> String {
        format!("{}-t{:06}", self.run.run_id, self.tasks.len() + 1)
    }

    pub fn next_ticket_id(&self) -> String {
        format!("{}-d{:06}", self.run.run_id, self.tickets.len() + 1)
    }

    /// Rejects an event that would break a state invariant. Does not mutate.
    pub fn check(&self, ev: &Event) -> ServiceResult<()> {
        match ev {
            Event::RunCreated { .. } => Err(ServiceError::Conflict(format!("run `{}` already exists", self.run.run_id))),
            Event::TaskEnqueued { task } => {
                let id = &task.image.image_id;
                if self.run.held_out.contains(id) {
                    return Err(ServiceError::Leakage(id.clone()));
                }
                if !self.run.pool.contains(id) {
                    return Err(ServiceError::NotFound(format!("image `{id}` in run `{}`", self.run.run_id)));
                }
                if self.task_by_image.contains_key(id) || self.tasks.contains_key(&task.task_id) {
                    return Err(ServiceError::Conflict(format!("image `{id}` already queued")));
                }
                if task.state != TaskState::Pending {
                    return Err(ServiceError::BadRequest("new tasks start pending".into()));
                }
                Ok(())
            }
            Event::LabelSubmitted { task_id, result } => {
                let task = self
                    .tasks
                    .get(task_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("task `{task_id}`")))?;
                if task.state != TaskState::Pending {
                    return Err(ServiceError::Conflict(format!("task `{task_id}` is already {:?}", task.state)));
                }
                if result.image_id != task.image.image_id {
                    return Err(ServiceError::BadRequest("annotation image does not match task".into()));
                }
                Ok(())
            }
            Event::TicketForwarded { ticket } => {
                if self.tickets.contains_key(&ticket.ticket_id) {
                    return Err(ServiceError::Conflict(format!("ticket `{}` exists", ticket.ticket_id)));
                }
                if ticket.queue == TicketQueue::Defect && ticket.predicted_label != Label::Defective {
                    return Err(ServiceError::BadRequest("defect tickets need a Defective prediction".into()));
                }
                if !(ticket.uncertainty > 0.0 && ticket.uncertainty <= 1.0) {
                    return Err(ServiceError::BadRequest(format!("uncertainty {} outside (0, 1]", ticket.uncertainty)));
                }
                Ok(())
            }
            Event::TicketResolved { ticket_id, resolution, .. } => {
                let t = self
                    .tickets
                    .get(ticket_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("ticket `{ticket_id}`")))?;
                if *resolution == Resolution::Open {
                    return Err(ServiceError::BadRequest("resolution must be confirmed or false_alarm".into()));
                }
                if t.resolution != Resolution::Open {
                    return Err(ServiceError::Conflict(format!("ticket `{ticket_id}` already resolved")));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, ev: &LoggedEvent) -> ServiceResult<()> {
        if ev.seq != self.seq + 1 {
            return Err(ServiceError::Corrupt(format!("expected seq {}, found {}", self.seq + 1, ev.seq)));
        }
        self.check(&ev.event)?;
        match &ev.event {
            Event::RunCreated { .. } => unreachable!("rejected by check"),
            Event::TaskEnqueued { task } => {
                self.task_by_image.insert(task.image.image_id.clone(), task.task_id.clone());
                self.tasks.insert(task.task_id.clone(), task.clone());
            }
            Event::LabelSubmitted { task_id, result } => {
                let task = self.tasks.get_mut(task_id).expect("checked");
                task.state = match result.label.label() {
                    Some(_) => TaskState::Labeled,
                    None => TaskState::Ambiguous,
                };
                task.result = Some(result.clone());
            }
            Event::TicketForwarded { ticket } => {
                self.tickets.insert(ticket.ticket_id.clone(), ticket.clone());
            }
            Event::TicketResolved {
                ticket_id,
                resolution,
                resolver,
                at,
            } => {
                let t = self.tickets.get_mut(ticket_id).expect("checked");
                t.resolution = *resolution;
                t.resolver = Some(resolver.clone());
                t.resolved_at = Some(*at);
            }
        }
        self.seq = ev.seq;
        Ok(())
    }
}
