//! Orchestrator invariants on a small rendered pool.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use alqa_core::acquisition::{AcquisitionStrategy, StrategyKind};
use alqa_core::classifier::{self, Architecture, ModelConfig};
use alqa_core::data_model::{split_dataset, Annotation, DataPool, Label, PerspectiveId, PreprocessConfig};
use alqa_core::orchestrator::{self, ExperimentConfig, Oracle, SimulatedOracle};
use alqa_core::synth::{generate_dataset, render_perspective, PartCatalog};
use alqa_core::Error;

fn pool() -> &'static DataPool {
    static POOL: OnceLock<DataPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let catalog = PartCatalog::default();
        let configs = generate_dataset(480, 0.3, 11, &catalog).unwrap();
        let records = render_perspective(&configs, PerspectiveId::ExteriorRear, &catalog, &PreprocessConfig::default()).unwrap();
        split_dataset(records, 400, 0.1, 5).unwrap()
    })
}

fn config(kind: StrategyKind, rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        perspective: PerspectiveId::ExteriorRear,
        strategy: AcquisitionStrategy::new(kind),
        initial_size: 100,
        rounds,
        model: ModelConfig {
            architecture: Architecture::SmallCnn,
            max_epochs: 2,
            patience: 1,
            ..ModelConfig::default()
        },
        seeds: vec![3],
        oracle: Default::default(),
        data: Default::default(),
    }
}

#[test]
fn invariants_hold_every_round() {
    let template = pool();
    let universe = template.train_universe();
    let held_out: BTreeSet<String> = template.validation.iter().chain(&template.test).map(|r| r.id.clone()).collect();
    assert!(universe.is_disjoint(&held_out));

    for kind in [StrategyKind::DealUncertainty, StrategyKind::UniformRandom] {
        let cfg = config(kind, 3);
        let mut oracle = SimulatedOracle::for_pool(template);
        let mut rounds_seen = 0;
        let curve = orchestrator::run_seed(&cfg, template, 3, &mut oracle, None, &mut |ev| {
            rounds_seen += 1;
            let p = ev.pool;
            let labeled: BTreeSet<String> = p.labeled.keys().cloned().collect();
            let unlabeled: BTreeSet<String> = p.unlabeled.keys().cloned().collect();
            assert!(labeled.is_disjoint(&unlabeled) && labeled.is_disjoint(&p.discarded));
            assert_eq!(labeled.len() + unlabeled.len() + p.discarded.len(), universe.len());
            let union: BTreeSet<String> = labeled.union(&unlabeled).chain(&p.discarded).cloned().collect();
            assert_eq!(union, universe);

            if let Some(batch) = ev.acquired {
                for id in batch {
                    assert!(p.unlabeled.contains_key(id), "{id} acquired from outside the pool");
                    assert!(!held_out.contains(id) && !p.is_held_out(id), "{id} leaked from val/test");
                }
            }

            let fresh = classifier::train(&p.labeled_set(), &p.validation, &orchestrator::round_model_config(&cfg, ev.seed)).unwrap();
            assert_eq!(fresh.weights_hash(), ev.model.weights_hash(), "round {} is not a fresh retrain", ev.round);
        })
        .unwrap();
        assert_eq!(rounds_seen, 4);
        let counts: Vec<usize> = curve.checkpoints.iter().map(|c| c.labeled_count).collect();
        assert_eq!(counts, vec![100, 200, 300, 400], "{kind:?}");
        assert!(curve.checkpoints.iter().all(|c| !c.pool_exhausted));
    }
}

#[test]
fn drained_pool_ends_early_with_flag() {
    let mut oracle = SimulatedOracle::for_pool(pool());
    let curve = orchestrator::run_seed(&config(StrategyKind::UniformRandom, 10), pool(), 3, &mut oracle, None, &mut |_| {}).unwrap();
    let last = curve.final_checkpoint().unwrap();
    assert_eq!((last.round, last.labeled_count, last.pool_exhausted), (3, 400, true));
    assert_eq!(curve.checkpoints.iter().filter(|c| c.pool_exhausted).count(), 1);
}

/// Marks every id ending in 7 as ambiguous.
struct Unsure(SimulatedOracle);

impl Oracle for Unsure {
    fn label(&mut self, ids: &[String]) -> alqa_core::Result<BTreeMap<String, Annotation>> {
        let mut out = self.0.label(ids)?;
        for (id, a) in out.iter_mut() {
            if id.ends_with('7') {
                *a = Annotation::Ambiguous;
            }
        }
        Ok(out)
    }
}

#[test]
fn ambiguous_answers_are_discarded() {
    let mut oracle = Unsure(SimulatedOracle::for_pool(pool()));
    let mut discarded = 0;
    orchestrator::run_seed(&config(StrategyKind::UniformRandom, 2), pool(), 3, &mut oracle, None, &mut |ev| {
        assert!(ev.pool.discarded.iter().all(|id| id.ends_with('7')));
        assert!(ev.pool.labeled.keys().all(|id| !id.ends_with('7')));
        discarded = ev.pool.discarded.len();
    })
    .unwrap();
    assert!(discarded > 0);
}

/// Fails once after `ok` successful calls.
struct Flaky {
    inner: SimulatedOracle,
    ok: usize,
    calls: usize,
}

impl Oracle for Flaky {
    fn label(&mut self, ids: &[String]) -> alqa_core::Result<BTreeMap<String, Annotation>> {
        self.calls += 1;
        if self.calls == self.ok + 1 {
            return Err(Error::OracleTimeout { pending: ids.len() });
        }
        self.inner.label(ids)
    }
}

#[test]
fn interrupted_run_resumes_to_identical_curve() {
    let cfg = config(StrategyKind::DealUncertainty, 3);
    let mut clean = SimulatedOracle::for_pool(pool());
    let expected = orchestrator::run_seed(&cfg, pool(), 3, &mut clean, None, &mut |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut flaky = Flaky {
        inner: SimulatedOracle::for_pool(pool()),
        ok: 2,
        calls: 0,
    };
    let err = orchestrator::run_seed(&cfg, pool(), 3, &mut flaky, Some(dir.path()), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::OracleTimeout { pending: 100 }));
    let saved = orchestrator::SeedState::load(dir.path(), 3).unwrap().unwrap();
    assert_eq!(saved.checkpoints.len(), 2);
    assert_eq!(saved.pending.as_ref().map(Vec::len), Some(100));

    let resumed = orchestrator::run_seed(&cfg, pool(), 3, &mut flaky, Some(dir.path()), &mut |_| {}).unwrap();
    assert_eq!(resumed, expected);
    // A finished run is a no-op on re-entry.
    let again = orchestrator::run_seed(&cfg, pool(), 3, &mut flaky, Some(dir.path()), &mut |_| {}).unwrap();
    assert_eq!(again, expected);
}

#[test]
fn constant_validation_stops_after_one_plus_patience() {
    let p = pool();
    // Only correct validation images: F2 is 0 (or undefined, scored 0) every epoch.
    let validation: Vec<_> = p.validation.iter().filter(|r| r.ground_truth == Some(Label::Correct)).cloned().collect();
    let labeled: Vec<_> = p.unlabeled.values().take(60).map(|r| (r.clone(), r.ground_truth.unwrap())).collect();
    let cfg = ModelConfig {
        architecture: Architecture::SmallCnn,
        max_epochs: 50,
        patience: 4,
        ..ModelConfig::default()
    };
    let model = classifier::train(&labeled, &validation, &cfg).unwrap();
    assert_eq!(model.history.len(), 1 + cfg.patience);
    assert_eq!(model.best_epoch, 0);
}
