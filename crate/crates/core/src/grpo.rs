//! Group-relative policy optimization: advantages, clipped ratio surrogate,
//! KL penalty and the composite loss.
//!
//! Everything here works on log-probabilities only. [`objective_logp_grad`]
//! returns dJ/d(log pi_theta) per sampled token so any differentiable policy
//! can chain it through its own parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_CLIP_EPSILON: f64 = 0.1;
pub const DEFAULT_KL_COEFF: f64 = 0.04;
pub const DEFAULT_STD_GUARD: f64 = 1e-8;
pub const DEFAULT_MAX_RATIO: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioGranularity {
    /// One ratio per output from whole-sequence log-probabilities.
    #[default]
    Sequence,
    /// One ratio per token, averaged over the output's length.
    Token,
}

/// Objective hyperparameters.
///
/// Discount (0.99), GAE lambda (0.95) and a value-loss coefficient (0.5)
/// appear in some published training setups for this method. They have no
/// role in a critic-free objective and are not represented here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub std_guard: f64,
    pub ratio_granularity: RatioGranularity,
    pub max_ratio: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: DEFAULT_GROUP_SIZE,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            kl_coeff: DEFAULT_KL_COEFF,
            std_guard: DEFAULT_STD_GUARD,
            ratio_granularity: RatioGranularity::Sequence,
            max_ratio: DEFAULT_MAX_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("group must hold at least 2 outputs, got {0}")]
    GroupTooSmall(usize),
    #[error("output {index}: {reason}")]
    InvalidOutput { index: usize, reason: String },
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig(format!("group_size {} < 2", self.group_size)));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::InvalidConfig(format!(
                "clip_epsilon {} outside (0, 1)",
                self.clip_epsilon
            )));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!("kl_coeff {} must be finite and >= 0", self.kl_coeff)));
        }
        if !(self.std_guard >= 0.0 && self.max_ratio > 1.0) {
            return Err(GrpoError::InvalidConfig("std_guard must be >= 0 and max_ratio > 1".into()));
        }
        Ok(())
    }
}

/// One sampled output with per-token log-probabilities under the current,
/// sampling (old) and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoOutput {
    pub tokens: Vec<usize>,
    pub logp_current: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
}

impl GrpoOutput {
    pub fn seq_logp_current(&self) -> f64 {
        self.logp_current.iter().sum()
    }
    pub fn seq_logp_old(&self) -> f64 {
        self.logp_old.iter().sum()
    }
    pub fn seq_logp_ref(&self) -> f64 {
        self.logp_ref.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub query_id: String,
    pub outputs: Vec<GrpoOutput>,
    pub advantages: Vec<f64>,
}

impl GrpoGroup {
    /// Validates the outputs and fills in advantages.
    pub fn new(query_id: impl Into<String>, outputs: Vec<GrpoOutput>, std_guard: f64) -> Result<Self, GrpoError> {
        if outputs.len() < 2 {
            return Err(GrpoError::GroupTooSmall(outputs.len()));
        }
        for (index, o) in outputs.iter().enumerate() {
            let n = o.tokens.len();
            if n == 0 || o.logp_current.len() != n || o.logp_old.len() != n || o.logp_ref.len() != n {
                return Err(GrpoError::InvalidOutput {
                    index,
                    reason: "log-probability vectors must match a nonempty token sequence".into(),
                });
            }
            let all_finite = o
                .logp_current
                .iter()
                .chain(&o.logp_old)
                .chain(&o.logp_ref)
                .all(|v| v.is_finite())
                && o.reward.is_finite();
            if !all_finite {
                return Err(GrpoError::InvalidOutput {
                    index,
                    reason: "non-finite log-probability or reward".into(),
                });
            }
        }
        let rewards: Vec<f64> = outputs.iter().map(|o| o.reward).collect();
        let advantages = normalize_advantages(&rewards, std_guard);
        Ok(GrpoGroup {
            query_id: query_id.into(),
            outputs,
            advantages,
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.outputs.iter().map(|o| o.reward).sum::<f64>() / self.outputs.len() as f64
    }
}

/// `(r_i - mean) / std` with population std; all zeros when std < guard.
pub fn normalize_advantages(rewards: &[f64], std_guard: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < std_guard || std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    /// Set when the raw ratio exceeded the cap and was clamped to it.
    pub clamped: bool,
}

/// `exp(logp_current - logp_old)`, capped at `max_ratio`.
pub fn importance_ratio(logp_current: f64, logp_old: f64, max_ratio: f64) -> Ratio {
    let raw = (logp_current - logp_old).exp();
    if raw > max_ratio || raw.is_nan() {
        Ratio { value: max_ratio, clamped: true }
    } else {
        Ratio { value: raw, clamped: false }
    }
}

/// `rho - ln rho - 1` with `rho = exp(logp_ref - logp_current)`.
pub fn kl_penalty(logp_ref: f64, logp_current: f64) -> f64 {
    let d = logp_ref - logp_current;
    // exp_m1 keeps the estimator exactly zero at d = 0 and accurate near it.
    d.exp_m1() - d
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// d clipped_term / d ratio. Zero wherever the clipped branch is the minimum.
fn clipped_term_dratio(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveStats {
    pub objective: f64,
    pub mean_kl: f64,
    pub clamped_ratios: usize,
}

/// `J = (1/G) sum_i [ clipped_term_i - beta * kl_i ]`.
pub fn grpo_objective(group: &GrpoGroup, cfg: &GrpoConfig) -> f64 {
    objective_stats(group, cfg).objective
}

pub fn objective_stats(group: &GrpoGroup, cfg: &GrpoConfig) -> ObjectiveStats {
    let g = group.outputs.len() as f64;
    let mut stats = ObjectiveStats::default();
    for (o, &adv) in group.outputs.iter().zip(&group.advantages) {
        let (surrogate, kl, clamped) = match cfg.ratio_granularity {
            RatioGranularity::Sequence => {
                let r = importance_ratio(o.seq_logp_current(), o.seq_logp_old(), cfg.max_ratio);
                let kl = kl_penalty(o.seq_logp_ref(), o.seq_logp_current());
                (clipped_term(r.value, adv, cfg.clip_epsilon), kl, r.clamped as usize)
            }
            RatioGranularity::Token => {
                let n = o.tokens.len() as f64;
                let mut surrogate = 0.0;
                let mut kl = 0.0;
                let mut clamped = 0;
                for t in 0..o.tokens.len() {
                    let r = importance_ratio(o.logp_current[t], o.logp_old[t], cfg.max_ratio);
                    surrogate += clipped_term(r.value, adv, cfg.clip_epsilon);
                    kl += kl_penalty(o.logp_ref[t], o.logp_current[t]);
                    clamped += r.clamped as usize;
                }
                (surrogate / n, kl / n, clamped)
            }
        };
        stats.objective += (surrogate - cfg.kl_coeff * kl) / g;
        stats.mean_kl += kl / g;
        stats.clamped_ratios += clamped;
    }
    stats
}

/// dJ / d logp_current[i][t] for every sampled token.
///
/// A clamped ratio is constant in the parameters and contributes no surrogate
/// gradient.
pub fn objective_logp_grad(group: &GrpoGroup, cfg: &GrpoConfig) -> Vec<Vec<f64>> {
    let g = group.outputs.len() as f64;
    let beta = cfg.kl_coeff;
    group
        .outputs
        .iter()
        .zip(&group.advantages)
        .map(|(o, &adv)| match cfg.ratio_granularity {
            RatioGranularity::Sequence => {
                let r = importance_ratio(o.seq_logp_current(), o.seq_logp_old(), cfg.max_ratio);
                let surrogate = if r.clamped {
                    0.0
                } else {
                    clipped_term_dratio(r.value, adv, cfg.clip_epsilon) * r.value
                };
                let rho = (o.seq_logp_ref() - o.seq_logp_current()).exp();
                let coeff = (surrogate + beta * (rho - 1.0)) / g;
                vec![coeff; o.tokens.len()]
            }
            RatioGranularity::Token => {
                let n = o.tokens.len() as f64;
                (0..o.tokens.len())
                    .map(|t| {
                        let r = importance_ratio(o.logp_current[t], o.logp_old[t], cfg.max_ratio);
                        let surrogate = if r.clamped {
                            0.0
                        } else {
                            clipped_term_dratio(r.value, adv, cfg.clip_epsilon) * r.value
                        };
                        let rho = (o.logp_ref[t] - o.logp_current[t]).exp();
                        (surrogate + beta * (rho - 1.0)) / (g * n)
                    })
                    .collect()
            }
        })
        .collect()
}

/// `L = sft_cot_loss - beta * reward_total`.
pub fn grpo_composite_loss(sft_cot_loss: f64, reward_total: f64, beta: f64) -> f64 {
    sft_cot_loss - beta * reward_total
}
