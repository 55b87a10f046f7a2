//! Per-sample scoring and the aggregated evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cot::{cot_quality, embed_f1, CotQualityScores};
use super::outcome::{classification_report, regression_report, ClassificationReport, RegressionReport};
use super::text::{bleu, rouge};
use crate::embed::EmbeddingProvider;
use crate::records::{instruction_text, SurvivalStatus};
use crate::trace::{lenient_prediction, parse_soft, parse_strict, SchemaProfile};

/// One line of the evaluation input JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub cancer_type: String,
    pub output_text: String,
    pub truth_status: SurvivalStatus,
    pub truth_months: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_trace: Option<String>,
    /// Patient summary used for step relevance; without it relevance is not scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_text: Option<String>,
    /// Instruction used for prompt overlap; defaults to the reasoning-mode instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub profile: SchemaProfile,
    pub rescale_baseline: Option<f64>,
    pub default_prompt: String,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            profile: SchemaProfile::ClinicalSchema,
            rescale_baseline: None,
            default_prompt: instruction_text(true),
        }
    }
}

/// One row of the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub cancer_type: String,
    pub strict_valid: bool,
    pub soft_valid: bool,
    pub pred_status: Option<String>,
    pub pred_months: Option<f64>,
    pub truth_status: String,
    pub truth_months: f64,
    pub n_steps: Option<usize>,
    pub avg_relevance: Option<f64>,
    pub min_relevance: Option<f64>,
    pub avg_coherence: Option<f64>,
    pub max_prompt_overlap: Option<f64>,
    pub bleu: Option<f64>,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Option<f64>,
    pub embed_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotStratum {
    pub n: usize,
    pub avg_relevance: Stat,
    pub min_relevance: Stat,
    pub avg_coherence: Stat,
    pub max_prompt_overlap: Stat,
    pub n_steps: Stat,
}

impl CotStratum {
    fn of(scores: &[CotQualityScores]) -> Option<CotStratum> {
        let col = |f: fn(&CotQualityScores) -> f64| Stat::of(&scores.iter().map(f).collect::<Vec<_>>());
        Some(CotStratum {
            n: scores.len(),
            avg_relevance: col(|s| s.avg_relevance)?,
            min_relevance: col(|s| s.min_relevance)?,
            avg_coherence: col(|s| s.avg_coherence)?,
            max_prompt_overlap: col(|s| s.max_prompt_overlap)?,
            n_steps: col(|s| s.n_steps as f64)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotQualityReport {
    pub overall: Option<CotStratum>,
    /// Only cancer types with at least one scored trace appear.
    pub by_cancer_type: BTreeMap<String, CotStratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n_pairs: usize,
    /// Corpus-level BLEU over all pairs.
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub embed_f1: Option<f64>,
    pub embed_f1_rescale_baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingReport {
    pub n_total: usize,
    pub n_scoreable: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub n_strict_valid: usize,
    pub n_soft_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub missing: MissingReport,
    pub format: FormatReport,
    pub classification: Option<ClassificationReport>,
    pub regression: Option<RegressionReport>,
    pub generation: Option<GenerationReport>,
    pub cot_quality: CotQualityReport,
    pub embedding_provider: String,
}

struct Scored {
    row: SampleScores,
    status: Option<SurvivalStatus>,
    cot: Option<CotQualityScores>,
    generation: Option<(String, String)>,
}

fn score_sample(rec: &EvalRecord, provider: &dyn EmbeddingProvider, opts: &ReportOptions) -> Scored {
    let strict_valid = parse_strict(&rec.output_text, opts.profile).is_ok();
    let soft = parse_soft(&rec.output_text, opts.profile).ok();
    let pred = lenient_prediction(&rec.output_text, opts.profile).ok();
    let mut errors = Vec::new();

    let cot = match (&soft, &rec.summary_text) {
        (Some(trace), Some(summary)) => {
            let prompt = rec.prompt_text.as_deref().unwrap_or(&opts.default_prompt);
            cot_quality(trace, summary, prompt, provider)
                .map_err(|e| errors.push(format!("cot quality: {e}")))
                .ok()
        }
        _ => None,
    };

    // Generated reasoning when the output parses, else the raw text.
    let candidate = soft.as_ref().map_or(rec.output_text.as_str(), |t| t.reasoning.as_str());
    let mut row_bleu = None;
    let mut row_rouge = None;
    let mut row_f1 = None;
    let generation = rec.reference_trace.as_ref().map(|reference| {
        row_bleu = bleu(&[candidate], &[reference.as_str()]).ok();
        row_rouge = Some(rouge(candidate, reference));
        row_f1 = embed_f1(candidate, reference, provider, opts.rescale_baseline)
            .map_err(|e| errors.push(format!("embed f1: {e}")))
            .ok();
        (candidate.to_string(), reference.clone())
    });

    Scored {
        row: SampleScores {
            id: rec.id.clone(),
            cancer_type: rec.cancer_type.clone(),
            strict_valid,
            soft_valid: soft.is_some(),
            pred_status: pred.as_ref().map(|p| p.status.label().to_string()),
            pred_months: pred.as_ref().map(|p| p.months),
            truth_status: rec.truth_status.label().to_string(),
            truth_months: rec.truth_months,
            n_steps: soft.as_ref().map(|t| t.steps.len()),
            avg_relevance: cot.map(|c| c.avg_relevance),
            min_relevance: cot.map(|c| c.min_relevance),
            avg_coherence: cot.map(|c| c.avg_coherence),
            max_prompt_overlap: cot.map(|c| c.max_prompt_overlap),
            bleu: row_bleu,
            rouge1: row_rouge.map(|r| r.rouge1),
            rouge2: row_rouge.map(|r| r.rouge2),
            rouge_l: row_rouge.map(|r| r.rouge_l),
            embed_f1: row_f1,
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        },
        status: pred.map(|p| p.status),
        cot,
        generation,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Scores every sample and aggregates in id order. Provider failures are
/// recorded on the sample row and leave its embedding scores out of the
/// aggregates.
pub fn build_report(
    records: &[EvalRecord],
    provider: &dyn EmbeddingProvider,
    opts: &ReportOptions,
) -> (EvalReport, Vec<SampleScores>) {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let scored: Vec<Scored> = sorted.par_iter().map(|r| score_sample(r, provider, opts)).collect();

    let status_preds: Vec<Option<SurvivalStatus>> = scored.iter().map(|s| s.status).collect();
    let status_truths: Vec<SurvivalStatus> = sorted.iter().map(|r| r.truth_status).collect();
    let month_preds: Vec<Option<f64>> = scored.iter().map(|s| s.row.pred_months).collect();
    let month_truths: Vec<f64> = sorted.iter().map(|r| r.truth_months).collect();
    let n_missing = status_preds.iter().filter(|p| p.is_none()).count();

    let pairs: Vec<&(String, String)> = scored.iter().filter_map(|s| s.generation.as_ref()).collect();
    let generation = (!pairs.is_empty()).then(|| {
        let cands: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let rows: Vec<&SampleScores> = scored.iter().filter(|s| s.generation.is_some()).map(|s| &s.row).collect();
        let col = |f: fn(&SampleScores) -> Option<f64>| rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let f1s = col(|r| r.embed_f1);
        GenerationReport {
            n_pairs: pairs.len(),
            bleu: bleu(&cands, &refs).unwrap_or(0.0),
            rouge1: mean(&col(|r| r.rouge1)),
            rouge2: mean(&col(|r| r.rouge2)),
            rouge_l: mean(&col(|r| r.rouge_l)),
            embed_f1: (!f1s.is_empty()).then(|| mean(&f1s)),
            embed_f1_rescale_baseline: opts.rescale_baseline,
        }
    });

    let mut strata: BTreeMap<String, Vec<CotQualityScores>> = BTreeMap::new();
    let mut all_cot = Vec::new();
    for s in &scored {
        if let Some(c) = s.cot {
            strata.entry(s.row.cancer_type.clone()).or_default().push(c);
            all_cot.push(c);
        }
    }
    let cot_quality = CotQualityReport {
        overall: CotStratum::of(&all_cot),
        by_cancer_type: strata
            .into_iter()
            .filter_map(|(k, v)| CotStratum::of(&v).map(|s| (k, s)))
            .collect(),
    };

    let report = EvalReport {
        n_samples: records.len(),
        missing: MissingReport {
            n_total: records.len(),
            n_scoreable: records.len() - n_missing,
            n_missing,
        },
        format: FormatReport {
            n_strict_valid: scored.iter().filter(|s| s.row.strict_valid).count(),
            n_soft_valid: scored.iter().filter(|s| s.row.soft_valid).count(),
        },
        classification: classification_report(&status_preds, &status_truths).ok(),
        regression: regression_report(&month_preds, &month_truths).ok(),
        generation,
        cot_quality,
        embedding_provider: provider.provider_id(),
    };
    (report, scored.into_iter().map(|s| s.row).collect())
}

/// Writes the per-sample rows as CSV with a header line.
pub fn write_samples_csv<W: std::io::Write>(rows: &[SampleScores], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
