//! Four-component composite reward for a generated output.

use serde::{Deserialize, Serialize};

use crate::records::SurvivalOutcome;
use crate::trace::{lenient_prediction, parse_soft, parse_strict, Prediction, SchemaProfile};

pub const CORRECT_REWARD: f64 = 1.0;
pub const INTEGER_REWARD: f64 = 0.5;
pub const STRICT_REWARD: f64 = 0.5;
pub const SOFT_REWARD: f64 = 0.5;
pub const MAX_REWARD: f64 = CORRECT_REWARD + INTEGER_REWARD + STRICT_REWARD + SOFT_REWARD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegerPolicy {
    /// Months text must be a plain non-negative integer (`30`, not `30.0`).
    #[default]
    StrictInteger,
    /// Any finite non-negative decimal qualifies.
    AnyFiniteNumeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub months_tolerance: f64,
    pub integer_policy: IntegerPolicy,
    pub schema_profile: SchemaProfile,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            months_tolerance: 0.0,
            integer_policy: IntegerPolicy::StrictInteger,
            schema_profile: SchemaProfile::ClinicalSchema,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_correct: f64,
    pub r_int: f64,
    pub r_strict: f64,
    pub r_soft: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn from_parts(r_correct: f64, r_int: f64, r_strict: f64, r_soft: f64) -> Self {
        RewardBreakdown {
            r_correct,
            r_int,
            r_strict,
            r_soft,
            total: r_correct + r_int + r_strict + r_soft,
        }
    }
}

pub fn correctness_reward(pred: &Prediction, truth: &SurvivalOutcome, cfg: &RewardConfig) -> f64 {
    let status_ok = pred.status == truth.status;
    let months_ok = (pred.months - truth.months).abs() <= cfg.months_tolerance;
    if status_ok && months_ok {
        CORRECT_REWARD
    } else {
        0.0
    }
}

pub fn integer_validity_reward(pred: &Prediction, cfg: &RewardConfig) -> f64 {
    let raw = pred.months_raw_text.trim();
    let valid = match cfg.integer_policy {
        IntegerPolicy::StrictInteger => !raw.is_empty() && raw.bytes().all(|b| b.is_ascii_digit()),
        IntegerPolicy::AnyFiniteNumeric => raw
            .parse::<f64>()
            .is_ok_and(|v| v.is_finite() && v >= 0.0),
    };
    if valid {
        INTEGER_REWARD
    } else {
        0.0
    }
}

/// `(r_strict, r_soft)`. Each requires the grammar and a readable prediction.
pub fn format_rewards(text: &str, cfg: &RewardConfig) -> (f64, f64) {
    let strict = parse_strict(text, cfg.schema_profile).is_ok();
    let soft = strict || parse_soft(text, cfg.schema_profile).is_ok();
    (
        if strict { STRICT_REWARD } else { 0.0 },
        if soft { SOFT_REWARD } else { 0.0 },
    )
}

/// Scores any text. The prediction is read from the final block when the soft
/// grammar matches and from the whole text otherwise; no prediction means
/// zero correctness and integer reward.
pub fn total_reward(text: &str, truth: &SurvivalOutcome, cfg: &RewardConfig) -> RewardBreakdown {
    let (r_strict, r_soft) = format_rewards(text, cfg);
    let (r_correct, r_int) = match lenient_prediction(text, cfg.schema_profile) {
        Ok(pred) => (
            correctness_reward(&pred, truth, cfg),
            integer_validity_reward(&pred, cfg),
        ),
        Err(_) => (0.0, 0.0),
    };
    RewardBreakdown::from_parts(r_correct, r_int, r_strict, r_soft)
}
