//! The active-learning protocol: seed pool, retrain from scratch, evaluate,
//! acquire, label, repeat. Also baseline-round selection and touchpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionStrategy, StrategyKind};
use crate::classifier::{self, ModelConfig, TrainedModel};
use crate::data_model::{Annotation, DataPool, Label, PerspectiveId, RecordRef};
use crate::error::{Error, IoContext, Result};
use crate::rng;

/// Where labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleBinding {
    /// Ground-truth lookup.
    #[default]
    Simulated,
    /// Human annotators through the labeling queue.
    Human {
        #[serde(default = "default_oracle_timeout")]
        timeout_s: u64,
        #[serde(default = "default_poll_ms")]
        poll_ms: u64,
    },
}

fn default_oracle_timeout() -> u64 {
    7 * 24 * 3600
}

fn default_poll_ms() -> u64 {
    2000
}

/// Dataset binding for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub dir: Option<PathBuf>,
    pub train_count: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            dir: None,
            train_count: 2000,
            val_fraction: 0.10,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub perspective: PerspectiveId,
    pub strategy: AcquisitionStrategy,
    #[serde(default = "default_initial")]
    pub initial_size: usize,
    pub rounds: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub oracle: OracleBinding,
    #[serde(default)]
    pub data: DataSpec,
}

fn default_initial() -> usize {
    100
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_size == 0 {
            return Err(Error::Config("initial_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.strategy.validate()?;
        self.model.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Label source. Calls block until every requested id is resolved.
pub trait Oracle {
    fn label(&mut self, ids: &[String]) -> Result<BTreeMap<String, Annotation>>;
}

/// Answers from ground truth; never ambiguous.
pub struct SimulatedOracle {
    truth: BTreeMap<String, Label>,
}

impl SimulatedOracle {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a RecordRef>) -> Self {
        SimulatedOracle {
            truth: records
                .into_iter()
                .filter_map(|r| r.ground_truth.map(|l| (r.id.clone(), l)))
                .collect(),
        }
    }

    pub fn for_pool(pool: &DataPool) -> Self {
        SimulatedOracle::new(pool.unlabeled.values().chain(pool.labeled.values().map(|(r, _)| r)))
    }
}

impl Oracle for SimulatedOracle {
    fn label(&mut self, ids: &[String]) -> Result<BTreeMap<String, Annotation>> {
        ids.iter()
            .map(|id| {
                self.truth
                    .get(id)
                    .map(|l| (id.clone(), Annotation::from(*l)))
                    .ok_or_else(|| Error::Contract(format!("no ground truth for `{id}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub labeled_count: usize,
    pub f2: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Set on the final checkpoint of a run that ran out of pool.
    #[serde(default)]
    pub pool_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub checkpoints: Vec<RoundResult>,
}

impl LearningCurve {
    pub fn final_checkpoint(&self) -> Option<&RoundResult> {
        self.checkpoints.last()
    }
}

/// Persisted progress of one seed, rewritten after every step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SeedState {
    pub seed: u64,
    pub next_round: usize,
    pub finished: bool,
    pub labeled: Vec<(String, Label)>,
    pub discarded: Vec<String>,
    pub pending: Option<Vec<String>>,
    pub checkpoints: Vec<RoundResult>,
}

impl SeedState {
    fn path(dir: &Path, seed: u64) -> PathBuf {
        dir.join(format!("state_seed{seed}.json"))
    }

    pub fn load(dir: &Path, seed: u64) -> Result<Option<Self>> {
        let path = Self::path(dir, seed);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).at(&path)?;
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir, self.seed);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?).at(&tmp)?;
        fs::rename(&tmp, &path).at(&path)
    }
}

/// What the orchestrator exposes after each trained round.
pub struct RoundEvent<'a> {
    pub seed: u64,
    pub round: usize,
    pub pool: &'a DataPool,
    pub model: &'a TrainedModel,
    pub acquired: Option<&'a [String]>,
}

/// Seed for the per-seed model initialization; shared by every round so
/// each retrain starts from the same fresh weights.
pub fn model_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, rng::tag("model"))
}

pub fn round_model_config(config: &ExperimentConfig, seed: u64) -> ModelConfig {
    ModelConfig {
        seed: model_seed(seed),
        ..config.model.clone()
    }
}

fn restore_pool(template: &DataPool, state: &SeedState) -> Result<DataPool> {
    let mut pool = template.clone();
    for (id, label) in &state.labeled {
        pool.apply_annotation(id, Annotation::from(*label))?;
    }
    for id in &state.discarded {
        pool.apply_annotation(id, Annotation::Ambiguous)?;
    }
    Ok(pool)
}

fn apply_labels(pool: &mut DataPool, state: &mut SeedState, batch: &[String], answers: &BTreeMap<String, Annotation>) -> Result<()> {
    for id in batch {
        let a = answers
            .get(id)
            .ok_or_else(|| Error::Contract(format!("oracle returned no label for `{id}`")))?;
        pool.apply_annotation(id, *a)?;
        match a.label() {
            Some(l) => state.labeled.push((id.clone(), l)),
            None => state.discarded.push(id.clone()),
        }
    }
    Ok(())
}

/// Runs the protocol for one seed. With `run_dir`, progress is checkpointed
/// after every step and an existing state file is resumed.
pub fn run_seed(
    config: &ExperimentConfig,
    template: &DataPool,
    seed: u64,
    oracle: &mut dyn Oracle,
    run_dir: Option<&Path>,
    observer: &mut dyn FnMut(RoundEvent<'_>),
) -> Result<LearningCurve> {
    config.validate()?;
    if template.validation.is_empty() || template.test.is_empty() {
        return Err(Error::Config("pool needs non-empty validation and test splits".into()));
    }
    let mut state = match run_dir {
        Some(dir) => SeedState::load(dir, seed)?,
        None => None,
    }
    .unwrap_or(SeedState {
        seed,
        ..SeedState::default()
    });
    let mut pool = restore_pool(template, &state)?;
    let save = |s: &SeedState| run_dir.map_or(Ok(()), |d| s.save(d));

    if state.next_round == 0 && state.labeled.is_empty() && state.discarded.is_empty() && state.pending.is_none() {
        let ids = acquisition::select_random(
            pool.unlabeled.keys(),
            config.initial_size,
            rng::derive_seed(seed, rng::tag("initial")),
        )?;
        state.pending = Some(ids);
        save(&state)?;
    }

    let model_cfg = round_model_config(config, seed);
    loop {
        if let Some(batch) = state.pending.clone() {
            let answers = oracle.label(&batch)?;
            apply_labels(&mut pool, &mut state, &batch, &answers)?;
            state.pending = None;
            save(&state)?;
        }
        if state.finished {
            break;
        }
        let round = state.next_round;
        let model = classifier::train(&pool.labeled_set(), &pool.validation, &model_cfg)?;
        let report = model.evaluate(&pool.test)?;
        let exhausted = round < config.rounds && pool.unlabeled.is_empty();
        state.checkpoints.push(RoundResult {
            round,
            labeled_count: pool.labeled.len(),
            f2: report.f2,
            precision: report.precision,
            recall: report.recall,
            pool_exhausted: exhausted,
        });
        info!(
            "{} seed {seed} round {round}: labeled {} test F2 {:.4}",
            config.strategy.kind.as_str(),
            pool.labeled.len(),
            report.f2
        );
        if round >= config.rounds || exhausted {
            state.finished = true;
            save(&state)?;
            observer(RoundEvent {
                seed,
                round,
                pool: &pool,
                model: &model,
                acquired: None,
            });
            break;
        }
        let batch = match config.strategy.kind {
            StrategyKind::DealUncertainty => {
                let scores = acquisition::score_pool_with(&model, &pool.unlabeled_records(), config.strategy.score)?;
                acquisition::select_top(&scores, config.strategy.batch_size)?
            }
            StrategyKind::UniformRandom => acquisition::select_random(
                pool.unlabeled.keys(),
                config.strategy.batch_size,
                rng::derive_seed(rng::derive_seed(seed, config.strategy.seed), round as u64),
            )?,
        };
        observer(RoundEvent {
            seed,
            round,
            pool: &pool,
            model: &model,
            acquired: Some(&batch),
        });
        state.pending = Some(batch);
        state.next_round = round + 1;
        save(&state)?;
    }

    Ok(LearningCurve {
        strategy: config.strategy.kind,
        seed,
        checkpoints: state.checkpoints,
    })
}

/// One learning curve per configured seed, run sequentially.
pub fn run_experiment(
    config: &ExperimentConfig,
    pool: &DataPool,
    oracle: &mut dyn Oracle,
    run_dir: Option<&Path>,
) -> Result<Vec<LearningCurve>> {
    config
        .seeds
        .iter()
        .map(|&seed| run_seed(config, pool, seed, oracle, run_dir, &mut |_| {}))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub round: usize,
    pub labeled_count: f64,
    pub f2_mean: f64,
    pub f2_std: f64,
    pub n: usize,
}

/// Seed mean and sample standard deviation of F2 per round, over the rounds
/// every curve reached.
pub fn mean_curve(curves: &[LearningCurve]) -> Result<Vec<MeanPoint>> {
    if curves.is_empty() || curves.iter().any(|c| c.checkpoints.is_empty()) {
        return Err(Error::Contract("empty learning curves".into()));
    }
    let common = curves.iter().map(|c| c.checkpoints.len()).min().unwrap_or(0);
    Ok((0..common)
        .map(|i| {
            let f2: Vec<f64> = curves.iter().map(|c| c.checkpoints[i].f2).collect();
            let n = f2.len() as f64;
            let mean = f2.iter().sum::<f64>() / n;
            let std = if f2.len() > 1 {
                (f2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MeanPoint {
                round: curves[0].checkpoints[i].round,
                labeled_count: curves.iter().map(|c| c.checkpoints[i].labeled_count as f64).sum::<f64>() / n,
                f2_mean: mean,
                f2_std: std,
                n: f2.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRounds {
    pub rounds: usize,
    pub reached: bool,
}

/// Smallest round whose seed-mean F2 is within `epsilon` of the full-data
/// score; the last available round, flagged, when none is.
pub fn determine_baseline_rounds(random_curves: &[LearningCurve], full_data_f2: f64, epsilon: f64) -> Result<BaselineRounds> {
    let mean = mean_curve(random_curves)?;
    let target = full_data_f2 - epsilon;
    Ok(match mean.iter().find(|p| p.f2_mean >= target) {
        Some(p) => BaselineRounds {
            rounds: p.round,
            reached: true,
        },
        None => BaselineRounds {
            rounds: mean.last().map_or(0, |p| p.round),
            reached: false,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touchpoint {
    pub labeled_count: f64,
    pub reached: bool,
}

/// Smallest labeled count whose F2 reaches `target_f2`.
pub fn touchpoint(curve: &[(f64, f64)], target_f2: f64) -> Result<Touchpoint> {
    if curve.is_empty() {
        return Err(Error::Contract("empty curve".into()));
    }
    Ok(match curve.iter().find(|(_, f2)| *f2 >= target_f2) {
        Some((count, _)) => Touchpoint {
            labeled_count: *count,
            reached: true,
        },
        None => Touchpoint {
            labeled_count: curve.last().expect("non-empty").0,
            reached: false,
        },
    })
}

pub fn mean_touchpoint(curves: &[LearningCurve], target_f2: f64) -> Result<Touchpoint> {
    let pts: Vec<(f64, f64)> = mean_curve(curves)?.iter().map(|p| (p.labeled_count, p.f2_mean)).collect();
    touchpoint(&pts, target_f2)
}

pub const CURVE_HEADER: &str = "strategy,seed,round,labeled_count,f2,precision,recall";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn curves_to_csv(curves: &[LearningCurve]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for c in curves {
        for p in &c.checkpoints {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.strategy.as_str(),
                c.seed,
                p.round,
                p.labeled_count,
                p.f2,
                opt(p.precision),
                opt(p.recall)
            ));
        }
    }
    s
}

pub fn curves_from_csv(text: &str) -> Result<Vec<LearningCurve>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(Error::Contract("curve CSV header mismatch".into()));
    }
    let mut curves: Vec<LearningCurve> = Vec::new();
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Contract(format!("curve CSV line {}: `{line}`", no + 2));
        if f.len() != 7 {
            return Err(bad());
        }
        let strategy = match f[0] {
            "deal_uncertainty" => StrategyKind::DealUncertainty,
            "uniform_random" => StrategyKind::UniformRandom,
            _ => return Err(bad()),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let optf = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let seed: u64 = f[1].parse().map_err(|_| bad())?;
        let point = RoundResult {
            round: f[2].parse().map_err(|_| bad())?,
            labeled_count: f[3].parse().map_err(|_| bad())?,
            f2: num(f[4])?,
            precision: optf(f[5])?,
            recall: optf(f[6])?,
            pool_exhausted: false,
        };
        match curves.iter_mut().find(|c| c.seed == seed && c.strategy == strategy) {
            Some(c) => c.checkpoints.push(point),
            None => curves.push(LearningCurve {
                strategy,
                seed,
                checkpoints: vec![point],
            }),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(seed: u64, f2: &[f64]) -> LearningCurve {
        LearningCurve {
            strategy: StrategyKind::UniformRandom,
            seed,
            checkpoints: f2
                .iter()
                .enumerate()
                .map(|(i, v)| RoundResult {
                    round: i,
                    labeled_count: 100 + 100 * i,
                    f2: *v,
                    precision: Some(0.9),
                    recall: None,
                    pool_exhausted: false,
                })
                .collect(),
        }
    }

    #[test]
    fn baseline_rounds_on_mean_curve() {
        let curves = [curve(0, &[0.45, 0.80, 0.950, 0.96]), curve(1, &[0.55, 0.80, 0.964, 0.96])];
        let r = determine_baseline_rounds(&curves, 0.960, 0.005).unwrap();
        assert_eq!(r, BaselineRounds { rounds: 2, reached: true });
        assert_eq!(determine_baseline_rounds(&curves, 0.0, 0.005).unwrap().rounds, 0);
        let never = determine_baseline_rounds(&curves, 0.999, 0.005).unwrap();
        assert_eq!(never, BaselineRounds { rounds: 3, reached: false });
        assert!(determine_baseline_rounds(&[], 0.9, 0.005).is_err());
    }

    #[test]
    fn touchpoints() {
        let c = [(100.0, 0.5), (200.0, 0.97)];
        assert_eq!(touchpoint(&c, 0.96).unwrap().labeled_count, 200.0);
        assert_eq!(touchpoint(&c, 0.1).unwrap().labeled_count, 100.0);
        assert!(!touchpoint(&c, 0.99).unwrap().reached);
    }

    #[test]
    fn csv_round_trip() {
        let curves = vec![curve(3, &[0.5, 0.75]), curve(4, &[0.6, 0.7])];
        let text = curves_to_csv(&curves);
        assert!(text.starts_with(CURVE_HEADER));
        assert_eq!(curves_from_csv(&text).unwrap(), curves);
    }

    #[test]
    fn mean_curve_std() {
        let m = mean_curve(&[curve(0, &[0.4]), curve(1, &[0.6])]).unwrap();
        assert!((m[0].f2_mean - 0.5).abs() < 1e-12);
        assert!((m[0].f2_std - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
