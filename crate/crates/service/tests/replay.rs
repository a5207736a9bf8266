//! Crash at every event boundary of a recorded 200-event session.

mod common;

use std::fs;
use std::path::Path;

use alqa_core::classifier::Prediction;
use alqa_core::data_model::{Annotation, Label};
use alqa_service::model::{Resolution, RunState};
use alqa_service::service::{ForwardOptions, Service};
use alqa_service::store::{EVENTS_FILE, SNAPSHOT_FILE};
use common::service_with_run;

struct Recording {
    log: Vec<String>,
    /// State and on-disk snapshot right after event k (index k - 1).
    states: Vec<RunState>,
    snapshots: Vec<Option<Vec<u8>>>,
}

fn record(root: &Path) -> Recording {
    let s = service_with_run(root, "run-a", 150, 20);
    let dir = root.join("run-a");
    let mut states = vec![s.run_state("run-a").unwrap()];
    let mut snapshots = vec![fs::read(dir.join(SNAPSHOT_FILE)).ok()];
    let mut step = |s: &Service| {
        states.push(s.run_state("run-a").unwrap());
        snapshots.push(fs::read(dir.join(SNAPSHOT_FILE)).ok());
    };

    let mut task_ids = Vec::new();
    for i in 0..100 {
        let t = s.enqueue_batch("run-a", &[format!("img{i:04}")]).unwrap();
        task_ids.push(t[0].task_id.clone());
        step(&s);
    }
    for (i, id) in task_ids.iter().take(60).enumerate() {
        let label = match i % 5 {
            0 => Annotation::Ambiguous,
            1 | 2 => Annotation::Defective,
            _ => Annotation::Correct,
        };
        s.submit_label(id, label, "annotator-1", 10.0 + i as f64).unwrap();
        step(&s);
    }
    let mut ticket_ids = Vec::new();
    for i in 0..30 {
        let p = Prediction {
            label: Label::Defective,
            uncertainty: 0.05 + i as f64 / 40.0,
            p_defective: 0.9,
        };
        let t = s.forward_predictions("run-a", &[(format!("img{:04}", 100 + i), p)], ForwardOptions::default()).unwrap();
        ticket_ids.push(t[0].ticket_id.clone());
        step(&s);
    }
    for (i, id) in ticket_ids.iter().take(9).enumerate() {
        let r = if i % 2 == 0 { Resolution::Confirmed } else { Resolution::FalseAlarm };
        s.resolve_ticket(id, r, "qa-manager").unwrap();
        step(&s);
    }
    let log: Vec<String> = fs::read_to_string(dir.join(EVENTS_FILE))
        .unwrap()
        .split_inclusive('\n')
        .map(str::to_owned)
        .collect();
    Recording { log, states, snapshots }
}

fn crash_copy(root: &Path, rec: &Recording, k: usize, torn: Option<usize>) {
    let dir = root.join("run-a");
    fs::create_dir_all(&dir).unwrap();
    let mut text: String = rec.log[..k].concat();
    if let Some(cut) = torn {
        text.push_str(&rec.log[k][..cut]);
    }
    fs::write(dir.join(EVENTS_FILE), text).unwrap();
    if let Some(snap) = &rec.snapshots[k - 1] {
        fs::write(dir.join(SNAPSHOT_FILE), snap).unwrap();
    }
}

#[test]
fn replay_reconstructs_state_at_every_boundary() {
    let src = tempfile::tempdir().unwrap();
    let rec = record(src.path());
    assert_eq!(rec.log.len(), 200);
    assert_eq!(rec.states.len(), 200);
    assert!(rec.snapshots.iter().any(Option::is_some), "session should cross a snapshot");

    for k in 1..=200 {
        let root = tempfile::tempdir().unwrap();
        crash_copy(root.path(), &rec, k, None);
        let s = Service::open(root.path()).unwrap();
        assert_eq!(s.run_state("run-a").unwrap(), rec.states[k - 1], "boundary {k}");
    }
}

#[test]
fn torn_trailing_event_is_lost_alone() {
    let src = tempfile::tempdir().unwrap();
    let rec = record(src.path());
    for k in (1..200).step_by(7) {
        let cut = rec.log[k].len() / 2;
        let root = tempfile::tempdir().unwrap();
        crash_copy(root.path(), &rec, k, Some(cut));
        let s = Service::open(root.path()).unwrap();
        assert_eq!(s.run_state("run-a").unwrap(), rec.states[k - 1], "torn after {k}");
        // The log was truncated to a clean boundary and accepts appends.
        s.enqueue_batch("run-a", &["img0149".into()]).unwrap();
        drop(s);
        let again = Service::open(root.path()).unwrap();
        assert_eq!(again.run_state("run-a").unwrap().seq, k as u64 + 1);
    }
}

#[test]
fn no_log_means_no_run() {
    let root = tempfile::tempdir().unwrap();
    fs::create_dir_all(root.path().join("run-a")).unwrap();
    let s = Service::open(root.path()).unwrap();
    assert!(s.run_ids().is_empty());
}
