//! Survival-status classification and survival-months regression metrics.
//! Missing predictions are counted and excluded, never imputed.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::records::SurvivalStatus;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// Deceased is the positive class.
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub living: ClassScores,
    pub deceased: ClassScores,
    pub macro_avg: Averaged,
    pub weighted_avg: Averaged,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_scoreable: usize,
    pub n_missing: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Per-class, macro and support-weighted precision/recall/F1. Undefined
/// ratios (zero denominators) count as 0.
pub fn classification_report(
    preds: &[Option<SurvivalStatus>],
    truths: &[SurvivalStatus],
) -> Result<ClassificationReport, MetricError> {
    if preds.len() != truths.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut c = Confusion::default();
    let mut n_missing = 0;
    for (p, t) in preds.iter().zip(truths) {
        match (p, t) {
            (None, _) => n_missing += 1,
            (Some(SurvivalStatus::Deceased), SurvivalStatus::Deceased) => c.tp += 1,
            (Some(SurvivalStatus::Deceased), SurvivalStatus::Living) => c.fp += 1,
            (Some(SurvivalStatus::Living), SurvivalStatus::Deceased) => c.fn_ += 1,
            (Some(SurvivalStatus::Living), SurvivalStatus::Living) => c.tn += 1,
        }
    }
    let n = c.tp + c.fp + c.fn_ + c.tn;
    if n == 0 {
        return Err(MetricError::AllMissing);
    }
    let deceased = class_scores(c.tp, c.fp, c.fn_);
    let living = class_scores(c.tn, c.fn_, c.fp);
    let macro_avg = Averaged {
        precision: (living.precision + deceased.precision) / 2.0,
        recall: (living.recall + deceased.recall) / 2.0,
        f1: (living.f1 + deceased.f1) / 2.0,
    };
    let w = |l: f64, d: f64| (l * living.support as f64 + d * deceased.support as f64) / n as f64;
    let weighted_avg = Averaged {
        precision: w(living.precision, deceased.precision),
        recall: w(living.recall, deceased.recall),
        f1: w(living.f1, deceased.f1),
    };
    Ok(ClassificationReport {
        living,
        deceased,
        macro_avg,
        weighted_avg,
        accuracy: ratio(c.tp + c.tn, n),
        confusion: c,
        n_scoreable: n,
        n_missing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mae: f64,
    pub rmse: f64,
    pub n_scoreable: usize,
    pub n_missing: usize,
}

pub fn regression_report(preds: &[Option<f64>], truths: &[f64]) -> Result<RegressionReport, MetricError> {
    if preds.len() != truths.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        if let Some(p) = p {
            let d = p - t;
            abs += d.abs();
            sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::AllMissing);
    }
    Ok(RegressionReport {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        n_scoreable: n,
        n_missing: preds.len() - n,
    })
}
