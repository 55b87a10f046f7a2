//! Corpus BLEU and ROUGE-1/2/L over whitespace tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

pub const BLEU_MAX_ORDER: usize = 4;
/// Numerator used in place of a zero n-gram match count.
pub const BLEU_ZERO_SMOOTHING: f64 = 1e-9;

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches of candidate n-grams against the reference.
fn clipped_overlap(cand: &[&str], reference: &[&str], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (overlap, cand.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// Corpus-level BLEU on a 0 to 100 scale: orders 1 to 4 with uniform weights,
/// clipped n-gram precision and a brevity penalty.
///
/// An order for which the candidates contain no n-grams at all is left out
/// and the remaining weights are renormalized, so `bleu(c, c) = 100` also
/// holds for candidates shorter than four tokens. A zero match count at a
/// scored order becomes [`BLEU_ZERO_SMOOTHING`].
pub fn bleu<S: AsRef<str>>(candidates: &[S], references: &[S]) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        let c = tokenize(c.as_ref());
        let r = tokenize(r.as_ref());
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let (m, t, _) = clipped_overlap(&c, &r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let scored: Vec<usize> = (0..BLEU_MAX_ORDER).filter(|&i| totals[i] > 0).collect();
    let weight = 1.0 / scored.len() as f64;
    let log_precision: f64 = scored
        .iter()
        .map(|&i| {
            let num = if matches[i] == 0 {
                BLEU_ZERO_SMOOTHING
            } else {
                matches[i] as f64
            };
            weight * (num / totals[i] as f64).ln()
        })
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * log_precision.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

fn f_measure(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (overlap, ct, rt) = clipped_overlap(&c, &r, n);
    if ct == 0 && rt == 0 {
        // Neither side is long enough for this order.
        return if c == r { 1.0 } else { 0.0 };
    }
    if ct == 0 || rt == 0 {
        return 0.0;
    }
    f_measure(overlap, ct, rt)
}

pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    f_measure(lcs_len(&c, &r), c.len(), r.len())
}

/// F-measures with beta = 1.
pub fn rouge(candidate: &str, reference: &str) -> RougeScores {
    RougeScores {
        rouge1: rouge_n(candidate, reference, 1),
        rouge2: rouge_n(candidate, reference, 2),
        rouge_l: rouge_l(candidate, reference),
    }
}
