//! `baseline-rounds`, `compare` and `report`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use alqa_core::acquisition::StrategyKind;
use alqa_core::data_model::PerspectiveId;
use alqa_core::metrics::{self, EconomicsParams, EconomicsReport, Savings};
use alqa_core::orchestrator::{self, LearningCurve, MeanPoint, Touchpoint};
use alqa_core::stats::{self, StatTestResult};
use anyhow::{ensure, Context, Result};
use serde::Serialize;

use crate::experiment::{read_curves, RunManifest};
use crate::{svg, BaselineArgs, CompareArgs, ReportArgs};

/// "Differs only marginally" from the full-data score, in absolute F2.
pub const DEFAULT_EPSILON: f64 = 0.005;

fn check_f2(v: f64) -> Result<()> {
    ensure!((0.0..=1.0).contains(&v), "full-data F2 must be in [0, 1], got {v}");
    Ok(())
}

fn perspective_of(run_dir: &Path) -> Result<Option<PerspectiveId>> {
    Ok(RunManifest::read(run_dir)?.map(|m| m.config.perspective))
}

#[derive(Serialize)]
struct BaselineOutput {
    rounds: usize,
    reached: bool,
    target_f2: f64,
    labeled_count: f64,
    f2_mean: f64,
}

pub fn baseline_rounds(a: &BaselineArgs) -> Result<()> {
    check_f2(a.full_f2)?;
    let curves = read_curves(&a.random)?;
    let r = orchestrator::determine_baseline_rounds(&curves, a.full_f2, a.epsilon)?;
    let mean = orchestrator::mean_curve(&curves)?;
    let at = mean
        .iter()
        .find(|p| p.round == r.rounds)
        .context("baseline round missing from the mean curve")?;
    let out = BaselineOutput {
        rounds: r.rounds,
        reached: r.reached,
        target_f2: a.full_f2 - a.epsilon,
        labeled_count: at.labeled_count,
        f2_mean: at.f2_mean,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// A test result, or why it could not be computed (too few pairs,
/// identical differences).
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Ok(StatTestResult),
    Err { error: String },
}

impl Outcome {
    fn from(r: alqa_core::Result<StatTestResult>, alpha: f64) -> Self {
        match r {
            Ok(t) => Outcome::Ok(t.with_alpha(alpha)),
            Err(e) => Outcome::Err { error: e.to_string() },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SeedTouchpoints {
    pub seed: u64,
    pub al: Touchpoint,
    pub baseline: Touchpoint,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub perspective: Option<PerspectiveId>,
    pub al_run: PathBuf,
    pub baseline_run: PathBuf,
    pub al_strategy: StrategyKind,
    pub baseline_strategy: StrategyKind,
    pub full_f2: f64,
    pub target_f2: f64,
    pub al_touchpoint: Touchpoint,
    pub baseline_touchpoint: Touchpoint,
    /// Present when both seed-mean curves reach the target.
    pub savings: Option<Savings>,
    pub per_seed: Vec<SeedTouchpoints>,
    /// Seeds whose AL touchpoint is at or below the baseline's.
    pub seeds_al_not_worse: usize,
    pub pairs: usize,
    pub al_mean_f2: f64,
    pub baseline_mean_f2: f64,
    pub shapiro_wilk: Outcome,
    pub paired_t: Outcome,
    pub wilcoxon: Outcome,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub epsilon: f64,
    pub alpha: f64,
    pub comparisons: Vec<Comparison>,
    pub total_images_saved: i64,
    pub mean_images_saved: Option<f64>,
    pub mean_savings_fraction: Option<f64>,
    /// Labeling time saved by the total; absent when the total is negative.
    pub economics: Option<EconomicsReport>,
}

/// F2 pairs over (seed × shared checkpoint round), AL first.
pub fn paired_f2(al: &[LearningCurve], baseline: &[LearningCurve]) -> (Vec<f64>, Vec<f64>) {
    let base: BTreeMap<u64, BTreeMap<usize, f64>> = baseline
        .iter()
        .map(|c| (c.seed, c.checkpoints.iter().map(|r| (r.round, r.f2)).collect()))
        .collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut al_sorted: Vec<&LearningCurve> = al.iter().collect();
    al_sorted.sort_by_key(|c| c.seed);
    for c in al_sorted {
        let Some(rounds) = base.get(&c.seed) else { continue };
        for r in &c.checkpoints {
            if let Some(f) = rounds.get(&r.round) {
                a.push(r.f2);
                b.push(*f);
            }
        }
    }
    (a, b)
}

fn seed_touchpoint(c: &LearningCurve, target: f64) -> Result<Touchpoint> {
    let pts: Vec<(f64, f64)> = c.checkpoints.iter().map(|r| (r.labeled_count as f64, r.f2)).collect();
    Ok(orchestrator::touchpoint(&pts, target)?)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn compare_runs(al_dir: &Path, base_dir: &Path, full_f2: f64, epsilon: f64, alpha: f64) -> Result<Comparison> {
    check_f2(full_f2)?;
    let al = read_curves(al_dir)?;
    let base = read_curves(base_dir)?;
    let target = full_f2 - epsilon;
    let al_touch = orchestrator::mean_touchpoint(&al, target)?;
    let base_touch = orchestrator::mean_touchpoint(&base, target)?;
    let savings = if al_touch.reached && base_touch.reached {
        Some(metrics::savings(
            al_touch.labeled_count.round() as u64,
            base_touch.labeled_count.round() as u64,
        )?)
    } else {
        None
    };

    let mut per_seed = Vec::new();
    for c in &al {
        if let Some(b) = base.iter().find(|b| b.seed == c.seed) {
            per_seed.push(SeedTouchpoints {
                seed: c.seed,
                al: seed_touchpoint(c, target)?,
                baseline: seed_touchpoint(b, target)?,
            });
        }
    }
    let seeds_al_not_worse = per_seed
        .iter()
        .filter(|s| s.al.reached && (!s.baseline.reached || s.al.labeled_count <= s.baseline.labeled_count))
        .count();

    let (a, b) = paired_f2(&al, &base);
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let perspective = perspective_of(al_dir)?.or(perspective_of(base_dir)?);
    Ok(Comparison {
        perspective,
        al_run: al_dir.to_owned(),
        baseline_run: base_dir.to_owned(),
        al_strategy: al[0].strategy,
        baseline_strategy: base[0].strategy,
        full_f2,
        target_f2: target,
        al_touchpoint: al_touch,
        baseline_touchpoint: base_touch,
        savings,
        per_seed,
        seeds_al_not_worse,
        pairs: a.len(),
        al_mean_f2: mean(&a),
        baseline_mean_f2: mean(&b),
        shapiro_wilk: Outcome::from(stats::shapiro_wilk(&diffs), alpha),
        paired_t: Outcome::from(stats::paired_t(&a, &b), alpha),
        wilcoxon: Outcome::from(stats::wilcoxon_signed_rank(&a, &b), alpha),
    })
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    ensure!(
        a.al.len() == a.baseline.len(),
        "--al and --baseline must be given the same number of times"
    );
    ensure!(
        a.full_f2.len() == 1 || a.full_f2.len() == a.al.len(),
        "--full-f2 takes one value or one per --al/--baseline pair"
    );
    let comparisons = a
        .al
        .iter()
        .zip(&a.baseline)
        .enumerate()
        .map(|(i, (al, base))| {
            let full = if a.full_f2.len() == 1 { a.full_f2[0] } else { a.full_f2[i] };
            compare_runs(al, base, full, a.epsilon, a.alpha)
        })
        .collect::<Result<Vec<_>>>()?;

    let saved: Vec<&Savings> = comparisons.iter().filter_map(|c| c.savings.as_ref()).collect();
    let total: i64 = saved.iter().map(|s| s.images_saved).sum();
    let params = EconomicsParams {
        avg_label_seconds: a.label_seconds,
        workday_hours: a.workday_hours,
        n_models: a.models,
    };
    let economics = if total >= 0 {
        Some(metrics::economics(total as f64, &params)?)
    } else {
        None
    };
    let report = CompareReport {
        epsilon: a.epsilon,
        alpha: a.alpha,
        total_images_saved: total,
        mean_images_saved: (!saved.is_empty()).then(|| total as f64 / saved.len() as f64),
        mean_savings_fraction: (!saved.is_empty())
            .then(|| saved.iter().map(|s| s.fraction).sum::<f64>() / saved.len() as f64),
        economics,
        comparisons,
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{json}");
    Ok(())
}

pub struct RunSummary {
    pub name: String,
    pub perspective: Option<PerspectiveId>,
    pub strategy: StrategyKind,
    pub mean: Vec<MeanPoint>,
}

pub fn summarize(run_dir: &Path) -> Result<RunSummary> {
    let curves = read_curves(run_dir)?;
    Ok(RunSummary {
        name: run_dir
            .file_name()
            .map_or_else(|| run_dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        perspective: perspective_of(run_dir)?,
        strategy: curves[0].strategy,
        mean: orchestrator::mean_curve(&curves)?,
    })
}

pub const REPORT_HEADER: &str = "run,perspective,strategy,round,labeled_count,f2_mean,f2_std,n";

pub fn report(a: &ReportArgs) -> Result<()> {
    let runs = a.runs.iter().map(|r| summarize(r)).collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(REPORT_HEADER);
    csv.push('\n');
    for r in &runs {
        let p = r.perspective.map_or("", PerspectiveId::as_str);
        for m in &r.mean {
            csv.push_str(&format!(
                "{},{p},{},{},{},{},{},{}\n",
                r.name,
                r.strategy.as_str(),
                m.round,
                m.labeled_count,
                m.f2_mean,
                m.f2_std,
                m.n
            ));
        }
    }
    match &a.out {
        Some(out) => fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{csv}"),
    }
    if let Some(path) = &a.svg {
        fs::write(path, svg::learning_curves(&runs)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
