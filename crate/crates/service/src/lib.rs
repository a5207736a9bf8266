//! Run registry, human-labeling queue and defect-forwarding queue, persisted
//! as a per-run JSONL event log, with an HTTP+JSON API.

pub mod error;
pub mod http;
pub mod model;
pub mod oracle;
pub mod service;
pub mod store;

pub use error::{ServiceError, ServiceResult};
pub use oracle::{HttpQueue, HumanOracle, LabelQueue};
pub use service::Service;
