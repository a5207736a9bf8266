#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use alqa_core::data_model::PerspectiveId;
use alqa_service::service::{CreateRun, Service};

pub fn ids(prefix: &str, n: usize) -> BTreeSet<String> {
    (0..n).map(|i| format!("{prefix}{i:04}")).collect()
}

pub fn service_with_run(root: &Path, run_id: &str, pool: usize, held_out: usize) -> Service {
    let s = Service::open(root).unwrap();
    s.create_run(CreateRun {
        run_id: Some(run_id.into()),
        perspective: PerspectiveId::ExteriorFront,
        dataset_dir: None,
        config: serde_json::json!({ "strategy": { "kind": "deal_uncertainty" } }),
        pool: ids("img", pool),
        held_out: ids("val", held_out),
    })
    .unwrap();
    s
}
