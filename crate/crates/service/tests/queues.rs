mod common;

use alqa_core::classifier::prediction_from_output;
use alqa_core::data_model::{Annotation, Label};
use alqa_core::evidential::EvidentialOutput;
use alqa_service::model::{Resolution, TaskState, TicketQueue};
use alqa_service::service::{ForwardOptions, Service, TaskFilter, TicketFilter};
use alqa_service::ServiceError;
use common::{ids, service_with_run};

fn batch(n: usize) -> Vec<String> {
    ids("img", n).into_iter().collect()
}

#[test]
fn enqueue_is_idempotent_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 150, 20);
    let first = s.enqueue_batch("r1", &batch(100)).unwrap();
    assert_eq!(first.len(), 100);
    assert!(first.iter().all(|t| t.state == TaskState::Pending));
    let again = s.enqueue_batch("r1", &batch(100)).unwrap();
    assert_eq!(first, again);
    assert_eq!(s.tasks(&TaskFilter::default()).unwrap().len(), 100);

    let leak = s.enqueue_batch("r1", &["val0003".to_string()]).unwrap_err();
    assert!(matches!(leak, ServiceError::Leakage(ref id) if id == "val0003"));
    assert!(matches!(s.enqueue_batch("r1", &["nope".into()]), Err(ServiceError::NotFound(_))));
    assert!(matches!(s.enqueue_batch("r9", &batch(1)), Err(ServiceError::NotFound(_))));
    // A rejected batch writes nothing, even for its valid ids.
    let mixed = vec!["img0120".to_string(), "val0001".to_string()];
    assert!(s.enqueue_batch("r1", &mixed).is_err());
    assert_eq!(s.tasks(&TaskFilter::default()).unwrap().len(), 100);
    let state = s.run_state("r1").unwrap();
    assert!(state.tasks.values().all(|t| !state.run.held_out.contains(&t.image.image_id)));
}

#[test]
fn labels_are_terminal() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 10, 2);
    let t = &s.enqueue_batch("r1", &batch(2)).unwrap()[0];
    let done = s.submit_label(&t.task_id, Annotation::Defective, "ann", 12.5).unwrap();
    assert_eq!(done.state, TaskState::Labeled);
    assert_eq!(done.result.as_ref().unwrap().label, Annotation::Defective);
    assert!(matches!(
        s.submit_label(&t.task_id, Annotation::Correct, "ann", 1.0),
        Err(ServiceError::Conflict(_))
    ));
    let other = &s.enqueue_batch("r1", &batch(2)).unwrap()[1];
    assert_eq!(s.submit_label(&other.task_id, Annotation::Ambiguous, "ann", 3.0).unwrap().state, TaskState::Ambiguous);
    assert!(matches!(s.submit_label("r1-t999999", Annotation::Correct, "a", 1.0), Err(ServiceError::NotFound(_))));
    let pending = s
        .tasks(&TaskFilter {
            state: Some(TaskState::Pending),
            run: None,
        })
        .unwrap();
    assert!(pending.is_empty());
}

#[test]
fn negative_duration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 3, 0);
    let t = &s.enqueue_batch("r1", &batch(1)).unwrap()[0];
    assert!(matches!(s.submit_label(&t.task_id, Annotation::Correct, "a", -1.0), Err(ServiceError::BadRequest(_))));
}

fn prediction(evidence: [f64; 2]) -> alqa_core::classifier::Prediction {
    prediction_from_output(&EvidentialOutput::from_evidence(&evidence).unwrap())
}

#[test]
fn defect_tickets_follow_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 10, 0);
    let all_correct = vec![("img0000".to_string(), prediction([0.0, 9.0])), ("img0001".to_string(), prediction([1.0, 3.0]))];
    assert!(s.forward_predictions("r1", &all_correct, ForwardOptions::default()).unwrap().is_empty());

    // α = (9.1111…, 2), S = 100/9, u = K/S = 0.18.
    let p = prediction([73.0 / 9.0, 1.0]);
    assert_eq!(p.label, Label::Defective);
    let t = s.forward_predictions("r1", &[("img0002".into(), p)], ForwardOptions::default()).unwrap();
    assert_eq!(t.len(), 1);
    assert!((t[0].uncertainty - 0.18).abs() < 1e-12);
    assert_eq!((t[0].resolution, t[0].queue), (Resolution::Open, TicketQueue::Defect));

    s.forward_predictions("r1", &[("img0003".into(), prediction([2.0, 0.0])), ("img0004".into(), prediction([30.0, 0.0]))], ForwardOptions::default())
        .unwrap();
    let open = s
        .tickets(&TicketFilter {
            resolution: Some(Resolution::Open),
            ..Default::default()
        })
        .unwrap();
    let u: Vec<f64> = open.iter().map(|t| t.uncertainty).collect();
    assert_eq!(open.len(), 3);
    assert!(u.windows(2).all(|w| w[0] >= w[1]), "{u:?}");

    let id = open[0].ticket_id.clone();
    let r = s.resolve_ticket(&id, Resolution::Confirmed, "qa").unwrap();
    assert_eq!((r.resolution, r.resolver.as_deref()), (Resolution::Confirmed, Some("qa")));
    assert!(r.resolved_at.is_some());
    assert!(matches!(s.resolve_ticket(&id, Resolution::FalseAlarm, "qa"), Err(ServiceError::Conflict(_))));
    let other = open[1].ticket_id.clone();
    assert_eq!(s.resolve_ticket(&other, Resolution::FalseAlarm, "qa").unwrap().resolution, Resolution::FalseAlarm);
    assert!(matches!(s.resolve_ticket(&open[2].ticket_id, Resolution::Open, "qa"), Err(ServiceError::BadRequest(_))));
}

#[test]
fn uncertain_queue_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 10, 0);
    let unsure_correct = vec![("img0000".to_string(), prediction([0.2, 0.5]))];
    assert!(s.forward_predictions("r1", &unsure_correct, ForwardOptions::default()).unwrap().is_empty());
    let t = s
        .forward_predictions("r1", &unsure_correct, ForwardOptions { uncertain_cutoff: Some(0.5) })
        .unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!((t[0].queue, t[0].predicted_label), (TicketQueue::Uncertain, Label::Correct));
}

#[test]
fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let s = service_with_run(dir.path(), "r1", 20, 2);
    let tasks = s.enqueue_batch("r1", &batch(5)).unwrap();
    s.submit_label(&tasks[0].task_id, Annotation::Correct, "a", 2.0).unwrap();
    let before = s.run_state("r1").unwrap();
    drop(s);
    let reopened = Service::open(dir.path()).unwrap();
    assert_eq!(reopened.run_state("r1").unwrap(), before);
    assert!(matches!(
        reopened.create_run(alqa_service::service::CreateRun {
            run_id: Some("r1".into()),
            perspective: alqa_core::data_model::PerspectiveId::ExteriorFront,
            dataset_dir: None,
            config: serde_json::Value::Null,
            pool: ids("img", 1),
            held_out: Default::default(),
        }),
        Err(ServiceError::Conflict(_))
    ));
}
