//! Formatted-answer environment and a GRPO trainer for [`ToyPolicy`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{objective_logp_grad, objective_stats, GrpoConfig, GrpoError, GrpoGroup, GrpoOutput};
use crate::policy::{l2_norm, Optimizer, OptimizerKind, ToyPolicy};
use crate::records::{SurvivalOutcome, SurvivalStatus};
use crate::reward::{total_reward, IntegerPolicy, RewardConfig};
use crate::sft::{sft_cot_loss_grad, CotDivergence, SftBatch, SftError, SftExample, SftLoss};
use crate::trace::SchemaProfile;

/// Anything that scores a fixed-length token sequence.
pub trait RewardEnv {
    fn vocab_size(&self) -> usize;
    fn seq_len(&self) -> usize;
    fn reward(&self, tokens: &[usize]) -> f64;
}

const VOCAB: [&str; 32] = [
    "",
    "<reasoning>",
    "</reasoning>",
    "<answer>",
    "</answer>",
    "1:DECEASED",
    "0:LIVING",
    "30",
    "12",
    "6",
    "48",
    "27.9",
    "33.0",
    ".",
    "stage",
    "metastatic",
    "disease",
    "chemotherapy",
    "response",
    "progression",
    "marker",
    "rising",
    "falling",
    "survival",
    "risk",
    "high",
    "low",
    "lung",
    "nodes",
    "prior",
    "therapy",
    "likely",
];

/// Generates 8 tokens from a 32-token vocabulary; the text (tokens joined by
/// spaces, the empty pad token dropped) is scored by the composite reward
/// against a fixed truth under the two-block schema.
#[derive(Debug, Clone)]
pub struct FormattedAnswerEnv {
    pub truth: SurvivalOutcome,
    pub reward_config: RewardConfig,
    pub seq_len: usize,
}

impl Default for FormattedAnswerEnv {
    fn default() -> Self {
        FormattedAnswerEnv {
            truth: SurvivalOutcome {
                status: SurvivalStatus::Deceased,
                months: 30.0,
            },
            reward_config: RewardConfig {
                months_tolerance: 0.0,
                integer_policy: IntegerPolicy::StrictInteger,
                schema_profile: SchemaProfile::RewardSchema,
            },
            seq_len: 8,
        }
    }
}

impl FormattedAnswerEnv {
    pub fn vocabulary() -> &'static [&'static str] {
        &VOCAB
    }

    pub fn token_id(token: &str) -> Option<usize> {
        VOCAB.iter().position(|t| *t == token)
    }

    pub fn render(tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| VOCAB[t])
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn encode(text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|t| Self::token_id(t).unwrap_or_else(|| panic!("token {t:?} not in vocabulary")))
            .collect()
    }

    /// Well-formed outputs whose answers all differ from the truth. Used for
    /// a short supervised warm-up so that sampled groups carry reward signal.
    pub fn warmup_exemplars() -> Vec<Vec<usize>> {
        [
            "<reasoning> stage disease </reasoning> <answer> 0:LIVING 12 </answer>",
            "<reasoning> metastatic progression </reasoning> <answer> 1:DECEASED 48 </answer>",
            "<reasoning> marker rising </reasoning> <answer> 0:LIVING 30 </answer>",
            "<reasoning> chemotherapy response </reasoning> <answer> 1:DECEASED 27.9 </answer>",
            "<reasoning> high risk </reasoning> <answer> 0:LIVING 6 </answer>",
            "<reasoning> prior therapy </reasoning> <answer> 1:DECEASED 12 </answer>",
        ]
        .iter()
        .map(|s| Self::encode(s))
        .collect()
    }
}

impl RewardEnv for FormattedAnswerEnv {
    fn vocab_size(&self) -> usize {
        VOCAB.len()
    }

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn reward(&self, tokens: &[usize]) -> f64 {
        total_reward(&Self::render(tokens), &self.truth, &self.reward_config).total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Gradient steps taken on each sampled group.
    pub inner_epochs: usize,
    /// Batches between refreshes of the sampling policy.
    pub old_refresh_every: usize,
    /// Batches between refreshes of the reference policy; `None` keeps the
    /// initial policy.
    pub ref_refresh_every: Option<usize>,
    pub seed: u64,
    pub grpo: GrpoConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 2000,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adam,
            inner_epochs: 1,
            old_refresh_every: 1,
            ref_refresh_every: None,
            seed: 42,
            grpo: GrpoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: &'static str },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error("policy shape does not match the environment")]
    ShapeMismatch,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub log: Vec<TrainLogRecord>,
}

/// Gradient ascent on the group objective. The reference policy is the
/// policy passed in unless `ref_refresh_every` says otherwise.
pub fn train_toy_policy(
    env: &dyn RewardEnv,
    policy: ToyPolicy,
    cfg: &ToyTrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.grpo.validate()?;
    if policy.vocab_size() != env.vocab_size() || policy.max_len() < env.seq_len() {
        return Err(TrainError::ShapeMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = policy;
    let mut old = policy.clone();
    let mut reference = policy.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, policy.params().len());
    let mut log = Vec::with_capacity(cfg.steps);
    let len = env.seq_len();

    for step in 0..cfg.steps {
        if step % cfg.old_refresh_every.max(1) == 0 {
            old = policy.clone();
        }
        if let Some(every) = cfg.ref_refresh_every {
            if step > 0 && step % every.max(1) == 0 {
                reference = policy.clone();
            }
        }
        let samples: Vec<(Vec<usize>, f64)> = (0..cfg.grpo.group_size)
            .map(|_| {
                let tokens = old.sample(len, &mut rng);
                let r = env.reward(&tokens);
                (tokens, r)
            })
            .collect();

        let mut record = None;
        for epoch in 0..cfg.inner_epochs.max(1) {
            let outputs = samples
                .iter()
                .map(|(tokens, reward)| GrpoOutput {
                    logp_current: policy.token_logps(tokens),
                    logp_old: old.token_logps(tokens),
                    logp_ref: reference.token_logps(tokens),
                    tokens: tokens.clone(),
                    reward: *reward,
                })
                .collect();
            let group = GrpoGroup::new(format!("step-{step}"), outputs, cfg.grpo.std_guard).map_err(|e| {
                match e {
                    GrpoError::InvalidOutput { .. } => TrainError::Divergence { step, what: "log-probability" },
                    other => other.into(),
                }
            })?;
            let stats = objective_stats(&group, &cfg.grpo);
            let coeffs = objective_logp_grad(&group, &cfg.grpo);
            let mut grad = vec![0.0; policy.params().len()];
            for (o, c) in group.outputs.iter().zip(&coeffs) {
                policy.accumulate_logp_grad(&o.tokens, c, &mut grad);
            }
            let grad_norm = l2_norm(&grad);
            if !stats.objective.is_finite() {
                return Err(TrainError::Divergence { step, what: "objective" });
            }
            if !grad_norm.is_finite() {
                return Err(TrainError::Divergence { step, what: "gradient" });
            }
            if epoch == 0 {
                record = Some(TrainLogRecord {
                    step,
                    mean_reward: group.mean_reward(),
                    objective: stats.objective,
                    grad_norm,
                    mean_kl: stats.mean_kl,
                });
            }
            opt.ascend(policy.params_mut(), &grad);
            if policy.params().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Divergence { step, what: "parameters" });
            }
        }
        log.extend(record);
    }
    Ok(TrainOutcome { policy, log })
}

/// Supervised warm-up on whole-sequence exemplars (no prompt, no trace).
/// Returns the loss before each step.
pub fn supervised_warmup(
    policy: &mut ToyPolicy,
    exemplars: &[Vec<usize>],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<SftLoss>, TrainError> {
    let batch = SftBatch {
        examples: exemplars
            .iter()
            .map(|e| SftExample {
                target: e.clone(),
                ..SftExample::default()
            })
            .collect(),
        lambda_cot: 0.0,
        divergence: CotDivergence::CrossEntropy,
    };
    let mut opt = Optimizer::new(OptimizerKind::Adam, learning_rate, policy.params().len());
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = sft_cot_loss_grad(policy, &batch)?;
        if !loss.total.is_finite() {
            return Err(TrainError::Divergence { step, what: "warm-up loss" });
        }
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.ascend(policy.params_mut(), &descent);
        losses.push(loss);
    }
    Ok(losses)
}

/// Mean reward over a trailing window ending at each step.
pub fn trailing_means(log: &[TrainLogRecord], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(log.len());
    let mut sum = 0.0;
    for (i, r) in log.iter().enumerate() {
        sum += r.mean_reward;
        if i >= window {
            sum -= log[i - window].mean_reward;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
