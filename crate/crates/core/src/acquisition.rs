//! Batch acquisition: Dirichlet uncertainty ranking and the uniform-random
//! baseline.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::classifier::TrainedModel;
use crate::data_model::RecordRef;
use crate::error::{Error, IoContext, Result};
use crate::evidential::EvidentialOutput;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    DealUncertainty,
    UniformRandom,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::DealUncertainty => "deal_uncertainty",
            StrategyKind::UniformRandom => "uniform_random",
        }
    }
}

/// Per-instance score used to rank the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyScore {
    /// `u = K / S`.
    #[default]
    Vacuity,
    /// Entropy of the expected class probabilities.
    ExpectedEntropy,
}

impl UncertaintyScore {
    pub fn score(self, o: &EvidentialOutput) -> f64 {
        match self {
            UncertaintyScore::Vacuity => o.uncertainty,
            UncertaintyScore::ExpectedEntropy => -o
                .expected_prob
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionStrategy {
    pub kind: StrategyKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score: UncertaintyScore,
}

fn default_batch() -> usize {
    100
}

impl AcquisitionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        AcquisitionStrategy {
            kind,
            batch_size: default_batch(),
            seed: 0,
            score: UncertaintyScore::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("acquisition batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uncertainty per pool id from one forward pass per instance.
pub fn score_pool(model: &TrainedModel, unlabeled: &[RecordRef]) -> Result<BTreeMap<String, f64>> {
    score_pool_with(model, unlabeled, UncertaintyScore::Vacuity)
}

pub fn score_pool_with(
    model: &TrainedModel,
    unlabeled: &[RecordRef],
    score: UncertaintyScore,
) -> Result<BTreeMap<String, f64>> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    let outputs = model.evidential_outputs(unlabeled)?;
    Ok(unlabeled
        .iter()
        .zip(&outputs)
        .map(|(r, o)| (r.id.clone(), score.score(o)))
        .collect())
}

/// The `batch_size` highest-scoring ids, descending, ties by ascending id.
pub fn select_top(scores: &BTreeMap<String, f64>, batch_size: usize) -> Result<Vec<String>> {
    if scores.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(batch_size).map(|(k, _)| k.clone()).collect())
}

/// `batch_size` ids drawn without replacement; ids are sorted first so the
/// draw depends only on the pool contents and seed.
pub fn select_random<'a>(pool: impl IntoIterator<Item = &'a String>, batch_size: usize, seed: u64) -> Result<Vec<String>> {
    let mut ids: Vec<&String> = pool.into_iter().collect();
    if ids.is_empty() {
        return Err(Error::EmptyPool);
    }
    ids.sort();
    ids.dedup();
    let take = batch_size.min(ids.len());
    let mut r = rng::seeded(seed);
    Ok(sample(&mut r, ids.len(), take).into_iter().map(|i| ids[i].clone()).collect())
}

/// Dispatches on the strategy kind. `scores` keys define the pool; for the
/// random baseline their values are ignored. Batches larger than the pool
/// return the whole pool.
pub fn select_batch(scores: &BTreeMap<String, f64>, strategy: &AcquisitionStrategy) -> Result<Vec<String>> {
    strategy.validate()?;
    match strategy.kind {
        StrategyKind::DealUncertainty => select_top(scores, strategy.batch_size),
        StrategyKind::UniformRandom => select_random(scores.keys(), strategy.batch_size, strategy.seed),
    }
}

pub fn write_scores_csv(path: &Path, scores: &BTreeMap<String, f64>) -> Result<()> {
    let mut s = String::from("id,uncertainty\n");
    for (id, u) in scores {
        s.push_str(&format!("{id},{u}\n"));
    }
    fs::write(path, s).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn deal(b: usize) -> AcquisitionStrategy {
        AcquisitionStrategy {
            batch_size: b,
            ..AcquisitionStrategy::new(StrategyKind::DealUncertainty)
        }
    }

    #[test]
    fn picks_highest_uncertainty() {
        let s = scores(&[("a", 0.9), ("b", 0.5), ("c", 0.1)]);
        assert_eq!(select_batch(&s, &deal(2)).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn ties_break_by_id() {
        let s = scores(&[("b", 0.7), ("a", 0.7)]);
        assert_eq!(select_batch(&s, &deal(1)).unwrap(), vec!["a"]);
    }

    #[test]
    fn oversized_batch_drains_pool() {
        let s = scores(&[("a", 0.2), ("b", 0.3), ("c", 0.1)]);
        assert_eq!(select_batch(&s, &deal(5)).unwrap(), vec!["b", "a", "c"]);
        let random = AcquisitionStrategy {
            batch_size: 5,
            ..AcquisitionStrategy::new(StrategyKind::UniformRandom)
        };
        let mut got = select_batch(&s, &random).unwrap();
        got.sort();
        assert_eq!(got, vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert!(matches!(select_batch(&BTreeMap::new(), &deal(1)), Err(Error::EmptyPool)));
    }

    #[test]
    fn entropy_score_peaks_at_half() {
        let flat = EvidentialOutput::from_evidence(&[3.0, 3.0]).unwrap();
        let sure = EvidentialOutput::from_evidence(&[30.0, 0.0]).unwrap();
        let e = UncertaintyScore::ExpectedEntropy;
        assert!((e.score(&flat) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(e.score(&sure) < e.score(&flat));
    }

    proptest! {
        #[test]
        fn random_selection_is_distinct_subset_and_deterministic(
            n in 1usize..60, b in 1usize..80, seed in any::<u64>()
        ) {
            let ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
            let a = select_random(&ids, b, seed).unwrap();
            let again = select_random(ids.iter().rev(), b, seed).unwrap();
            prop_assert_eq!(&a, &again);
            prop_assert_eq!(a.len(), b.min(n));
            let set: std::collections::BTreeSet<_> = a.iter().collect();
            prop_assert_eq!(set.len(), a.len());
            prop_assert!(a.iter().all(|x| ids.contains(x)));
        }

        #[test]
        fn top_selection_ignores_insertion_order(
            vals in proptest::collection::vec((0u8..5, 0usize..40), 1..40), b in 1usize..10
        ) {
            let forward: BTreeMap<String, f64> =
                vals.iter().map(|(v, i)| (format!("x{i:02}"), *v as f64 / 4.0)).collect();
            let mut backward = BTreeMap::new();
            for (k, v) in forward.iter().rev() {
                backward.insert(k.clone(), *v);
            }
            let a = select_top(&forward, b).unwrap();
            prop_assert_eq!(&a, &select_top(&backward, b).unwrap());
            // Descending scores, ascending ids within ties.
            for w in a.windows(2) {
                let (s0, s1) = (forward[&w[0]], forward[&w[1]]);
                prop_assert!(s0 > s1 || (s0 == s1 && w[0] < w[1]));
            }
        }
    }
}
