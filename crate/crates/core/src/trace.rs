//! Tagged reasoning-trace grammar: strict and soft parsing, prediction
//! extraction and step segmentation.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::SurvivalStatus;

/// Which tag layout an output is expected to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemaProfile {
    /// `<reasoning>` then `<answer>`.
    RewardSchema,
    /// `<reasoning>`, `<comment>`, `<prediction>`.
    #[default]
    ClinicalSchema,
}

impl SchemaProfile {
    pub fn tags(self) -> &'static [&'static str] {
        match self {
            SchemaProfile::RewardSchema => &["reasoning", "answer"],
            SchemaProfile::ClinicalSchema => &["reasoning", "comment", "prediction"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatErrorKind {
    MissingTag,
    DuplicateTag,
    OutOfOrder,
    TrailingContent,
    /// Non-whitespace text before the first block or between blocks.
    StrayContent,
    /// The reasoning block holds no steps.
    EmptyReasoning,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at tag `{tag}`")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub tag: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionParseError {
    #[error("no survival status (0:LIVING / 1:DECEASED) found")]
    NoStatus,
    #[error("no survival months found")]
    NoMonths,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("prediction error: {0}")]
    Prediction(#[from] PredictionParseError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub status: SurvivalStatus,
    pub months: f64,
    /// The exact numeric token the months were read from.
    pub months_raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
    pub comment: Option<String>,
    pub prediction: Prediction,
    pub profile: SchemaProfile,
    /// Trimmed content of the reasoning block.
    pub reasoning: String,
    pub raw: String,
}

/// Trimmed inner content of each block, in profile order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks<'a> {
    pub contents: Vec<&'a str>,
}

/// Checks the grammar only, without looking at the prediction.
pub fn match_strict<'a>(text: &'a str, profile: SchemaProfile) -> Result<Blocks<'a>, FormatError> {
    let tags = profile.tags();
    // Census first: every tag must open and close exactly once.
    for &tag in tags {
        let open = text.matches(&open_tag(tag)).count();
        let close = text.matches(&close_tag(tag)).count();
        if open == 0 || close == 0 {
            return Err(FormatError { kind: FormatErrorKind::MissingTag, tag });
        }
        if open > 1 || close > 1 {
            return Err(FormatError { kind: FormatErrorKind::DuplicateTag, tag });
        }
    }
    let mut spans = Vec::with_capacity(tags.len());
    let mut prev_end = 0usize;
    for &tag in tags {
        let open_at = text.find(&open_tag(tag)).unwrap();
        let close_at = text.find(&close_tag(tag)).unwrap();
        let inner_start = open_at + open_tag(tag).len();
        if open_at < prev_end || close_at < inner_start {
            return Err(FormatError { kind: FormatErrorKind::OutOfOrder, tag });
        }
        spans.push((open_at, inner_start, close_at, close_at + close_tag(tag).len()));
        prev_end = close_at + close_tag(tag).len();
    }
    let mut cursor = 0usize;
    for (&tag, &(open_at, _, _, end)) in tags.iter().zip(&spans) {
        if !text[cursor..open_at].trim().is_empty() {
            return Err(FormatError { kind: FormatErrorKind::StrayContent, tag });
        }
        cursor = end;
    }
    if !text[cursor..].trim().is_empty() {
        return Err(FormatError {
            kind: FormatErrorKind::TrailingContent,
            tag: tags[tags.len() - 1],
        });
    }
    Ok(Blocks {
        contents: spans.iter().map(|&(_, s, e, _)| text[s..e].trim()).collect(),
    })
}

/// Finds the first occurrence of each block in order, tolerating any text
/// around and between them.
pub fn match_soft<'a>(text: &'a str, profile: SchemaProfile) -> Result<Blocks<'a>, FormatError> {
    let tags = profile.tags();
    let mut cursor = 0usize;
    let mut contents = Vec::with_capacity(tags.len());
    for &tag in tags {
        let open = open_tag(tag);
        let close = close_tag(tag);
        let Some(rel) = text[cursor..].find(&open) else {
            let kind = if text.contains(&open) && text.contains(&close) {
                FormatErrorKind::OutOfOrder
            } else {
                FormatErrorKind::MissingTag
            };
            return Err(FormatError { kind, tag });
        };
        let inner_start = cursor + rel + open.len();
        let Some(rel_close) = text[inner_start..].find(&close) else {
            let kind = if text.contains(&close) {
                FormatErrorKind::OutOfOrder
            } else {
                FormatErrorKind::MissingTag
            };
            return Err(FormatError { kind, tag });
        };
        let inner_end = inner_start + rel_close;
        contents.push(text[inner_start..inner_end].trim());
        cursor = inner_end + close.len();
    }
    Ok(Blocks { contents })
}

/// Parses `text` under the exact block grammar of `profile`.
pub fn parse_strict(text: &str, profile: SchemaProfile) -> Result<ReasoningTrace, TraceError> {
    let blocks = match_strict(text, profile)?;
    build_trace(text, profile, blocks)
}

/// Parses `text` requiring only that the blocks appear in order.
pub fn parse_soft(text: &str, profile: SchemaProfile) -> Result<ReasoningTrace, TraceError> {
    let blocks = match_soft(text, profile)?;
    build_trace(text, profile, blocks)
}

fn build_trace(
    text: &str,
    profile: SchemaProfile,
    blocks: Blocks<'_>,
) -> Result<ReasoningTrace, TraceError> {
    let reasoning = blocks.contents[0];
    let steps = split_steps(reasoning);
    if steps.is_empty() {
        return Err(FormatError {
            kind: FormatErrorKind::EmptyReasoning,
            tag: "reasoning",
        }
        .into());
    }
    let prediction = extract_prediction(blocks.contents[blocks.contents.len() - 1])?;
    let comment = match profile {
        SchemaProfile::ClinicalSchema => Some(blocks.contents[1].to_string()),
        SchemaProfile::RewardSchema => None,
    };
    Ok(ReasoningTrace {
        steps,
        comment,
        prediction,
        profile,
        reasoning: reasoning.to_string(),
        raw: text.to_string(),
    })
}

fn open_tag(tag: &str) -> String {
    format!("<{tag}>")
}

fn close_tag(tag: &str) -> String {
    format!("</{tag}>")
}

static STATUS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)0:LIVING|1:DECEASED").unwrap());
static MONTHS_LABEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)months\s*\)?\s*:").unwrap());
static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());
static STEP_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bstep\s+\d+\s*:").unwrap());
static SENTENCE_END_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[.!?]+(?:\s+|$)").unwrap());

/// Reads the survival status and months out of a prediction block (or any
/// text).
///
/// Status is the first `0:LIVING` / `1:DECEASED` (any case). Months is the
/// first number on the rest of the line after a `months):` label; without a
/// label, the first number after the status token.
pub fn extract_prediction(text: &str) -> Result<Prediction, PredictionParseError> {
    let status_match = STATUS_RE.find(text).ok_or(PredictionParseError::NoStatus)?;
    let status = if status_match.as_str().starts_with('1') {
        SurvivalStatus::Deceased
    } else {
        SurvivalStatus::Living
    };

    let search = match MONTHS_LABEL_RE.find(text) {
        Some(label) => {
            let rest = &text[label.end()..];
            rest.split('\n').next().unwrap_or("")
        }
        None => &text[status_match.end()..],
    };
    let token = NUMBER_RE.find(search).ok_or(PredictionParseError::NoMonths)?;
    let months: f64 = token
        .as_str()
        .parse()
        .map_err(|_| PredictionParseError::NoMonths)?;
    if !months.is_finite() || months < 0.0 {
        return Err(PredictionParseError::NoMonths);
    }
    Ok(Prediction {
        status,
        months,
        months_raw_text: token.as_str().to_string(),
    })
}

/// Splits reasoning into steps: on `Step N:` markers when present, otherwise
/// into sentences. Text before the first marker becomes its own segment.
pub fn split_steps(reasoning: &str) -> Vec<String> {
    let text = reasoning.trim();
    if text.is_empty() {
        return Vec::new();
    }
    let markers: Vec<_> = STEP_MARKER_RE.find_iter(text).collect();
    let mut steps = Vec::new();
    if markers.is_empty() {
        // Fragments without letters (list numbering like "1.") are carried
        // into the following sentence.
        let mut start = 0;
        for m in SENTENCE_END_RE.find_iter(text) {
            let piece = &text[start..m.end()];
            if piece.chars().any(char::is_alphabetic) {
                push_segment(&mut steps, piece);
                start = m.end();
            }
        }
        push_segment(&mut steps, &text[start..]);
    } else {
        push_segment(&mut steps, &text[..markers[0].start()]);
        for (i, m) in markers.iter().enumerate() {
            let end = markers.get(i + 1).map_or(text.len(), |n| n.start());
            push_segment(&mut steps, &text[m.end()..end]);
        }
    }
    steps
}

fn push_segment(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Prediction from the final block when the soft grammar matches, else from
/// the whole text.
pub fn lenient_prediction(text: &str, profile: SchemaProfile) -> Result<Prediction, PredictionParseError> {
    match match_soft(text, profile) {
        Ok(blocks) => extract_prediction(blocks.contents[blocks.contents.len() - 1]),
        Err(_) => extract_prediction(text),
    }
}
