//! Generation, outcome and reasoning-quality metrics.

pub mod cot;
pub mod outcome;
pub mod report;
pub mod text;

use thiserror::Error;

use crate::embed::EmbedError;

pub use cot::{cot_quality, cot_quality_steps, embed_f1, CotQualityScores};
pub use outcome::{classification_report, regression_report, ClassificationReport, RegressionReport};
pub use report::{build_report, EvalRecord, EvalReport, ReportOptions, SampleScores};
pub use text::{bleu, rouge, RougeScores};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no scoreable predictions")]
    AllMissing,
    #[error("text has no reasoning steps")]
    NoSteps,
    #[error("rescale baseline {0} must be finite and below 1")]
    InvalidBaseline(f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}
