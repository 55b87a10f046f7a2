//! Embedding-based reasoning-quality scores.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::embed::{cosine, EmbeddingProvider, EmbeddingRequest};
use crate::trace::{split_steps, ReasoningTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotQualityScores {
    /// Mean cosine between each step and the patient summary.
    pub avg_relevance: f64,
    pub min_relevance: f64,
    /// Mean cosine between consecutive steps; 1.0 for a single step.
    pub avg_coherence: f64,
    /// Largest cosine between any step and the prompt instruction.
    pub max_prompt_overlap: f64,
    pub n_steps: usize,
}

pub fn cot_quality(
    trace: &ReasoningTrace,
    summary_text: &str,
    prompt_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<CotQualityScores, MetricError> {
    cot_quality_steps(&trace.steps, summary_text, prompt_text, provider)
}

pub fn cot_quality_steps(
    steps: &[String],
    summary_text: &str,
    prompt_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<CotQualityScores, MetricError> {
    if steps.is_empty() {
        return Err(MetricError::NoSteps);
    }
    let mut texts: Vec<String> = steps.to_vec();
    texts.push(summary_text.to_string());
    texts.push(prompt_text.to_string());
    let vectors = provider.embed(&EmbeddingRequest::new(texts))?.vectors;
    let (step_vecs, rest) = vectors.split_at(steps.len());
    let (summary, prompt) = (&rest[0], &rest[1]);

    let relevance: Vec<f64> = step_vecs.iter().map(|s| cosine(s, summary)).collect::<Result<_, _>>()?;
    let avg_relevance = relevance.iter().sum::<f64>() / relevance.len() as f64;
    let min_relevance = relevance.iter().copied().fold(f64::INFINITY, f64::min);
    let avg_coherence = if step_vecs.len() == 1 {
        1.0
    } else {
        let pairs: Vec<f64> = step_vecs
            .windows(2)
            .map(|w| cosine(&w[0], &w[1]))
            .collect::<Result<_, _>>()?;
        pairs.iter().sum::<f64>() / pairs.len() as f64
    };
    let max_prompt_overlap = step_vecs
        .iter()
        .map(|s| cosine(s, prompt))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CotQualityScores {
        avg_relevance,
        min_relevance,
        avg_coherence,
        max_prompt_overlap,
        n_steps: steps.len(),
    })
}

/// Greedy max-cosine matching between the step segments of two texts.
/// Precision matches candidate segments against the reference, recall the
/// reverse. With a baseline `b` the result is `(F1 - b) / (1 - b)`.
pub fn embed_f1(
    candidate: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
    rescale_baseline: Option<f64>,
) -> Result<f64, MetricError> {
    let cand = split_steps(candidate);
    let refs = split_steps(reference);
    if cand.is_empty() || refs.is_empty() {
        return Err(MetricError::NoSteps);
    }
    let mut texts = cand.clone();
    texts.extend(refs.iter().cloned());
    let vectors = provider.embed(&EmbeddingRequest::new(texts))?.vectors;
    let (cv, rv) = vectors.split_at(cand.len());
    let mut sim = vec![vec![0.0; rv.len()]; cv.len()];
    for (i, c) in cv.iter().enumerate() {
        for (j, r) in rv.iter().enumerate() {
            sim[i][j] = cosine(c, r)?;
        }
    }
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cv.len() as f64;
    let recall = (0..rv.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / rv.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(match rescale_baseline {
        Some(b) => rescale(f1, b)?,
        None => f1,
    })
}

pub fn rescale(f1: f64, baseline: f64) -> Result<f64, MetricError> {
    if !(baseline < 1.0 && baseline.is_finite()) {
        return Err(MetricError::InvalidBaseline(baseline));
    }
    Ok((f1 - baseline) / (1.0 - baseline))
}
