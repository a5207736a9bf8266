//! Active-learning quality assurance for synthetic vehicle renders: data
//! model, procedural renderer, evidential classifier, acquisition, the
//! experiment protocol, and the statistics used to compare strategies.

pub mod acquisition;
pub mod classifier;
pub mod data_model;
pub mod error;
pub mod evidential;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
