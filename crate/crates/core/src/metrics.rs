//! Confusion counting, the recall-weighted F2 score, touchpoint savings and
//! labeling-time economics.

use serde::{Deserialize, Serialize};

use crate::data_model::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// `None` when no instance was predicted defective.
    pub precision: Option<f64>,
    /// `None` when no defective instance exists.
    pub recall: Option<f64>,
    pub f2: f64,
}

/// Generic F-beta from precision and recall.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// `F2 = 5·P·R / (4·P + R)`.
pub fn f2(precision: f64, recall: f64) -> f64 {
    let denom = 4.0 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        5.0 * precision * recall / denom
    }
}

/// Metrics with `Defective` as the positive class.
///
/// An undefined ratio (zero denominator) is reported as `None`. F2 is 0
/// whenever `tp = 0` and something was missed or falsely flagged; all-zero
/// counts are an error.
pub fn f2_from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<MetricReport> {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Err(Error::UndefinedMetric("F2 needs at least one positive prediction or instance"));
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let f2 = match (precision, recall) {
        (Some(p), Some(r)) => f2(p, r),
        _ => 0.0,
    };
    Ok(MetricReport {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f2,
    })
}

pub fn evaluate(pairs: impl IntoIterator<Item = (Label, Label)>) -> Result<MetricReport> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (predicted, truth) in pairs {
        match (predicted, truth) {
            (Label::Defective, Label::Defective) => tp += 1,
            (Label::Defective, Label::Correct) => fp += 1,
            (Label::Correct, Label::Defective) => fn_ += 1,
            (Label::Correct, Label::Correct) => tn += 1,
        }
    }
    f2_from_counts(tp, fp, fn_, tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub images_saved: i64,
    pub fraction: f64,
}

/// Baseline touchpoint minus AL touchpoint; negative savings are kept.
pub fn savings(al_touch: u64, random_touch: u64) -> Result<Savings> {
    if al_touch == 0 || random_touch == 0 {
        return Err(Error::Contract("touchpoints must be >= 1".into()));
    }
    let images_saved = random_touch as i64 - al_touch as i64;
    Ok(Savings {
        images_saved,
        fraction: images_saved as f64 / random_touch as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicsParams {
    pub avg_label_seconds: f64,
    pub workday_hours: f64,
    pub n_models: f64,
}

impl Default for EconomicsParams {
    fn default() -> Self {
        EconomicsParams {
            avg_label_seconds: 31.0,
            workday_hours: 8.0,
            n_models: 18.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicsReport {
    pub images_saved: f64,
    pub avg_label_seconds: f64,
    pub workday_hours: f64,
    pub n_models: f64,
    pub hours_saved: f64,
    pub person_days_per_model: f64,
    pub fleet_days: f64,
}

pub fn economics(images_saved: f64, params: &EconomicsParams) -> Result<EconomicsReport> {
    if !(images_saved >= 0.0) {
        return Err(Error::Contract(format!("images_saved must be >= 0, got {images_saved}")));
    }
    let hours_saved = images_saved * params.avg_label_seconds / 3600.0;
    let person_days_per_model = hours_saved / params.workday_hours;
    Ok(EconomicsReport {
        images_saved,
        avg_label_seconds: params.avg_label_seconds,
        workday_hours: params.workday_hours,
        n_models: params.n_models,
        hours_saved,
        person_days_per_model,
        fleet_days: person_days_per_model * params.n_models,
    })
}
