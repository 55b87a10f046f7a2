//! Supervised loss with a chain-of-thought distillation term:
//! `L = L_SFT + lambda_cot * D(z, z*)`, mean-reduced over tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::ToyPolicy;

/// Per-token log-probability floor.
pub const LOGP_FLOOR: f64 = -30.0;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SftError {
    #[error("distribution at position {position} sums to {sum}")]
    Domain { position: usize, sum: f64 },
    #[error("{0}")]
    Shape(String),
    #[error("KL divergence requires teacher distributions for example {0}")]
    MissingTeacherDistributions(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotDivergence {
    /// Cross-entropy of the teacher trace tokens under the student.
    #[default]
    CrossEntropy,
    /// KL(teacher || student) against supplied teacher distributions.
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nll {
    pub value: f64,
    /// Positions whose log-probability hit [`LOGP_FLOOR`].
    pub floored: usize,
}

fn check_distribution(d: &[f64], position: usize) -> Result<(), SftError> {
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE || d.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(SftError::Domain { position, sum });
    }
    Ok(())
}

fn floored_ln(p: f64) -> (f64, bool) {
    let l = p.ln();
    if l < LOGP_FLOOR {
        (LOGP_FLOOR, true)
    } else {
        (l, false)
    }
}

/// Mean negative log-probability of `targets` under teacher-forced
/// distributions (one per target position).
pub fn token_nll(distributions: &[Vec<f64>], targets: &[usize]) -> Result<Nll, SftError> {
    if distributions.len() != targets.len() {
        return Err(SftError::Shape(format!(
            "{} distributions for {} targets",
            distributions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Ok(Nll { value: 0.0, floored: 0 });
    }
    let mut total = 0.0;
    let mut floored = 0;
    for (i, (d, &y)) in distributions.iter().zip(targets).enumerate() {
        check_distribution(d, i)?;
        let p = *d.get(y).ok_or_else(|| SftError::Shape(format!("target {y} outside vocabulary")))?;
        let (l, hit) = floored_ln(p);
        total -= l;
        floored += hit as usize;
    }
    Ok(Nll {
        value: total / targets.len() as f64,
        floored,
    })
}

/// Mean per-token KL(teacher || student).
pub fn token_kl(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<Nll, SftError> {
    if student.len() != teacher.len() {
        return Err(SftError::Shape("student/teacher position count differs".into()));
    }
    if student.is_empty() {
        return Ok(Nll { value: 0.0, floored: 0 });
    }
    let mut total = 0.0;
    let mut floored = 0;
    for (i, (q, p)) in student.iter().zip(teacher).enumerate() {
        check_distribution(q, i)?;
        check_distribution(p, i)?;
        if q.len() != p.len() {
            return Err(SftError::Shape(format!("vocabulary size differs at position {i}")));
        }
        for (&qv, &pv) in q.iter().zip(p) {
            if pv > 0.0 {
                let (lq, hit) = floored_ln(qv);
                total += pv * (pv.ln() - lq);
                floored += hit as usize;
            }
        }
    }
    Ok(Nll {
        value: total / student.len() as f64,
        floored,
    })
}

/// `D(z, z*)`: cross-entropy of `teacher_trace` under the student, or KL
/// against `teacher_distributions` when `kind` is [`CotDivergence::Kl`].
pub fn cot_divergence(
    student: &[Vec<f64>],
    teacher_trace: &[usize],
    teacher_distributions: Option<&[Vec<f64>]>,
    kind: CotDivergence,
) -> Result<Nll, SftError> {
    match kind {
        CotDivergence::CrossEntropy => token_nll(student, teacher_trace),
        CotDivergence::Kl => {
            let teacher = teacher_distributions.ok_or(SftError::MissingTeacherDistributions(0))?;
            token_kl(student, teacher)
        }
    }
}

/// One teacher-forced training example laid out as `x ++ z* ++ y`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SftExample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub teacher_trace: Option<Vec<usize>>,
    /// Per-position teacher distributions aligned to `teacher_trace`.
    pub teacher_distributions: Option<Vec<Vec<f64>>>,
}

impl SftExample {
    fn sequence(&self) -> Vec<usize> {
        let mut s = self.input.clone();
        if let Some(z) = &self.teacher_trace {
            s.extend_from_slice(z);
        }
        s.extend_from_slice(&self.target);
        s
    }

    fn trace_range(&self) -> std::ops::Range<usize> {
        let start = self.input.len();
        start..start + self.teacher_trace.as_ref().map_or(0, Vec::len)
    }

    fn target_range(&self) -> std::ops::Range<usize> {
        let start = self.trace_range().end;
        start..start + self.target.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SftBatch {
    pub examples: Vec<SftExample>,
    pub lambda_cot: f64,
    pub divergence: CotDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SftLoss {
    pub total: f64,
    pub l_sft: f64,
    pub l_cot: f64,
    pub floored: usize,
}

impl SftBatch {
    pub fn validate(&self, policy: &ToyPolicy) -> Result<(), SftError> {
        if !(self.lambda_cot >= 0.0 && self.lambda_cot.is_finite()) {
            return Err(SftError::Shape(format!("lambda_cot {} must be finite and >= 0", self.lambda_cot)));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.target.is_empty() {
                return Err(SftError::Shape(format!("example {i} has an empty target")));
            }
            let len = ex.sequence().len();
            if len > policy.max_len() {
                return Err(SftError::Shape(format!(
                    "example {i} spans {len} tokens, policy holds {}",
                    policy.max_len()
                )));
            }
            if ex.sequence().iter().any(|&t| t >= policy.vocab_size()) {
                return Err(SftError::Shape(format!("example {i} has a token outside the vocabulary")));
            }
            if self.divergence == CotDivergence::Kl {
                if let Some(z) = &ex.teacher_trace {
                    match &ex.teacher_distributions {
                        Some(d) if d.len() == z.len() => {}
                        _ => return Err(SftError::MissingTeacherDistributions(i)),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Loss value only.
pub fn sft_cot_loss(policy: &ToyPolicy, batch: &SftBatch) -> Result<SftLoss, SftError> {
    sft_cot_loss_with_grad(policy, batch, false).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to the policy parameters.
pub fn sft_cot_loss_grad(policy: &ToyPolicy, batch: &SftBatch) -> Result<(SftLoss, Vec<f64>), SftError> {
    sft_cot_loss_with_grad(policy, batch, true)
}

fn sft_cot_loss_with_grad(
    policy: &ToyPolicy,
    batch: &SftBatch,
    want_grad: bool,
) -> Result<(SftLoss, Vec<f64>), SftError> {
    batch.validate(policy)?;
    let n_target: usize = batch.examples.iter().map(|e| e.target.len()).sum();
    let n_trace: usize = batch
        .examples
        .iter()
        .map(|e| e.teacher_trace.as_ref().map_or(0, Vec::len))
        .sum();

    let mut grad = if want_grad {
        vec![0.0; policy.params().len()]
    } else {
        Vec::new()
    };
    let mut sft_sum = 0.0;
    let mut cot_sum = 0.0;
    let mut floored = 0;
    let vocab = policy.vocab_size();

    for ex in &batch.examples {
        let seq = ex.sequence();
        let dists = policy.distributions(&seq);

        let targets = &seq[ex.target_range()];
        let nll = token_nll(&dists[ex.target_range()], targets)?;
        sft_sum += nll.value * targets.len() as f64;
        floored += nll.floored;
        if want_grad {
            for t in ex.target_range() {
                if dists[t][seq[t]].ln() >= LOGP_FLOOR {
                    let mut w = vec![0.0; vocab];
                    w[seq[t]] = 1.0;
                    policy.accumulate_soft_grad(&seq, t, &w, -1.0 / n_target as f64, &mut grad);
                }
            }
        }

        if ex.teacher_trace.is_none() || n_trace == 0 {
            continue;
        }
        let range = ex.trace_range();
        let teacher = ex.teacher_distributions.as_deref();
        let d = cot_divergence(&dists[range.clone()], &seq[range.clone()], teacher, batch.divergence)?;
        cot_sum += d.value * range.len() as f64;
        floored += d.floored;
        if want_grad && batch.lambda_cot != 0.0 {
            let scale = -batch.lambda_cot / n_trace as f64;
            for (k, t) in range.enumerate() {
                let mut w = match (batch.divergence, teacher) {
                    (CotDivergence::Kl, Some(td)) => td[k].clone(),
                    _ => {
                        let mut w = vec![0.0; vocab];
                        w[seq[t]] = 1.0;
                        w
                    }
                };
                for (v, wv) in w.iter_mut().enumerate() {
                    if dists[t][v].ln() < LOGP_FLOOR {
                        *wv = 0.0;
                    }
                }
                policy.accumulate_soft_grad(&seq, t, &w, scale, &mut grad);
            }
        }
    }

    let l_sft = if n_target == 0 { 0.0 } else { sft_sum / n_target as f64 };
    let l_cot = if n_trace == 0 { 0.0 } else { cot_sum / n_trace as f64 };
    Ok((
        SftLoss {
            total: l_sft + batch.lambda_cot * l_cot,
            l_sft,
            l_cot,
            floored,
        },
        grad,
    ))
}

/// One line of the training-pair JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub prompt_text: String,
    pub target_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_trace_text: Option<String>,
}

/// Whitespace-token vocabulary with ids assigned in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ids = BTreeMap::new();
        for text in texts {
            for tok in text.split_whitespace() {
                ids.entry(tok.to_string()).or_insert(0);
            }
        }
        let tokens: Vec<String> = ids.keys().cloned().collect();
        for (i, tok) in tokens.iter().enumerate() {
            ids.insert(tok.clone(), i);
        }
        Vocabulary { ids, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encodes `text`, or returns the first token missing from the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, String> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| t.to_string()))
            .collect()
    }

    pub fn example(&self, pair: &TrainingPair) -> Result<SftExample, String> {
        Ok(SftExample {
            input: self.encode(&pair.prompt_text)?,
            target: self.encode(&pair.target_text)?,
            teacher_trace: pair.teacher_trace_text.as_deref().map(|z| self.encode(z)).transpose()?,
            teacher_distributions: None,
        })
    }
}
