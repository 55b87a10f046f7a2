//! Patient records: ingestion, cancer-specific attribute selection, tumor
//! marker trends, and rendering of summaries and prompts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Default slope (units per day) under which a marker series counts as flat.
pub const DEFAULT_FLAT_THRESHOLD: f64 = 0.01;

const DEFAULT_ATTRIBUTE_MAP: &str = include_str!("../data/attribute_map.txt");

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed record{}: {reason}", id.as_deref().map(|i| format!(" {i}")).unwrap_or_default())]
    MalformedRecord { id: Option<String>, reason: String },
    #[error("type error in `{field}`: {reason}")]
    TypeError { field: String, reason: String },
    #[error("attribute map line {line}: {reason}")]
    AttributeMap { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CancerType {
    Breast,
    Colorectal,
    Nsclc,
    Pancreatic,
    Prostate,
    Other(String),
}

impl CancerType {
    pub fn as_str(&self) -> &str {
        match self {
            CancerType::Breast => "Breast",
            CancerType::Colorectal => "Colorectal",
            CancerType::Nsclc => "NSCLC",
            CancerType::Pancreatic => "Pancreatic",
            CancerType::Prostate => "Prostate",
            CancerType::Other(name) => name,
        }
    }

    /// Long-form name used in the sample-specific section header.
    pub fn display_name(&self) -> &str {
        match self {
            CancerType::Breast => "Breast Cancer",
            CancerType::Colorectal => "Colorectal Cancer",
            CancerType::Nsclc => "Non-Small Cell Lung Cancer",
            CancerType::Pancreatic => "Pancreatic Cancer",
            CancerType::Prostate => "Prostate Cancer",
            CancerType::Other(name) => name,
        }
    }
}

impl FromStr for CancerType {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_key(s);
        Ok(match key.as_str() {
            "breast" | "breastcancer" => CancerType::Breast,
            "colorectal" | "colorectalcancer" => CancerType::Colorectal,
            "nsclc" | "nonsmallcelllungcancer" | "nsclclung" => CancerType::Nsclc,
            "pancreatic" | "pancreaticcancer" => CancerType::Pancreatic,
            "prostate" | "prostatecancer" => CancerType::Prostate,
            _ => CancerType::Other(s.trim().to_string()),
        })
    }
}

impl fmt::Display for CancerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CancerType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CancerType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sex {
    Female,
    Male,
    Other(String),
}

impl Sex {
    fn parse(s: &str) -> Sex {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Sex::Female,
            "male" | "m" => Sex::Male,
            _ => Sex::Other(s.trim().to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Sex::Female => "Female",
            Sex::Male => "Male",
            Sex::Other(s) => s,
        }
    }
}

impl Serialize for Sex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

/// Overall survival status. The discriminants are the dataset labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SurvivalStatus {
    Living = 0,
    Deceased = 1,
}

impl SurvivalStatus {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Canonical label, e.g. `1:DECEASED`.
    pub fn label(self) -> &'static str {
        match self {
            SurvivalStatus::Living => "0:LIVING",
            SurvivalStatus::Deceased => "1:DECEASED",
        }
    }

    /// Accepts `0`/`1`, `LIVING`/`DECEASED` and `0:LIVING`/`1:DECEASED`.
    pub fn from_value(v: &Value) -> Option<SurvivalStatus> {
        match v {
            Value::Number(n) => match n.as_u64() {
                Some(0) => Some(SurvivalStatus::Living),
                Some(1) => Some(SurvivalStatus::Deceased),
                _ => None,
            },
            Value::String(s) => match s.trim().to_ascii_uppercase().as_str() {
                "0" | "LIVING" | "0:LIVING" => Some(SurvivalStatus::Living),
                "1" | "DECEASED" | "1:DECEASED" => Some(SurvivalStatus::Deceased),
                _ => None,
            },
            _ => None,
        }
    }
}

impl<'de> Deserialize<'de> for SurvivalStatus {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        SurvivalStatus::from_value(&v)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid survival status {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalOutcome {
    pub status: SurvivalStatus,
    pub months: f64,
}

impl SurvivalOutcome {
    pub fn from_value(v: &Value) -> Result<SurvivalOutcome, String> {
        let obj = v.as_object().ok_or("outcome must be an object")?;
        let status = obj
            .get("status")
            .and_then(SurvivalStatus::from_value)
            .ok_or("outcome.status must be 0/1, LIVING/DECEASED or 0:LIVING/1:DECEASED")?;
        let months = obj
            .get("months")
            .and_then(number_like)
            .ok_or("outcome.months must be a number")?;
        if !months.is_finite() || months < 0.0 {
            return Err(format!("outcome.months must be finite and non-negative, got {months}"));
        }
        Ok(SurvivalOutcome { status, months })
    }
}

impl<'de> Deserialize<'de> for SurvivalOutcome {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        SurvivalOutcome::from_value(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Chemotherapy,
    Immunotherapy,
    Radiation,
    Investigational,
    Surgery,
}

impl Modality {
    fn parse(s: &str) -> Option<Modality> {
        match normalize_key(s).as_str() {
            "chemotherapy" | "chemo" => Some(Modality::Chemotherapy),
            "immunotherapy" => Some(Modality::Immunotherapy),
            "radiation" | "radiationtherapy" | "radiotherapy" => Some(Modality::Radiation),
            "investigational" | "investigationaltherapy" => Some(Modality::Investigational),
            "surgery" => Some(Modality::Surgery),
            _ => None,
        }
    }

    fn key(self) -> &'static str {
        match self {
            Modality::Chemotherapy => "Chemotherapy",
            Modality::Immunotherapy => "Immunotherapy",
            Modality::Radiation => "Radiation",
            Modality::Investigational => "Investigational",
            Modality::Surgery => "Surgery",
        }
    }

    fn heading(self) -> &'static str {
        match self {
            Modality::Radiation => "Radiation Therapy",
            Modality::Investigational => "Investigational Therapy",
            other => other.key(),
        }
    }
}

impl Serialize for Modality {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreatmentSpan {
    pub modality: Modality,
    pub agents: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub day_start: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub day_end: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Demographics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoking_history: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabPoint {
    pub day: i64,
    pub value: f64,
}

impl Serialize for LabPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(2))?;
        seq.serialize_element(&self.day)?;
        seq.serialize_element(&self.value)?;
        seq.end()
    }
}

/// A structured clinical record. Immutable once parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub cancer_type: CancerType,
    pub demographics: Demographics,
    pub stage: Option<String>,
    pub clinical_attributes: IndexMap<String, String>,
    pub biomarkers: IndexMap<String, String>,
    pub tumor_sites: Vec<String>,
    pub treatments: Vec<TreatmentSpan>,
    /// Sorted ascending by day within each marker.
    pub lab_series: BTreeMap<String, Vec<LabPoint>>,
    pub sample_info: IndexMap<String, String>,
    pub outcome: SurvivalOutcome,
}

impl Serialize for PatientRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("patient_id", &self.patient_id)?;
        map.serialize_entry("cancer_type", &self.cancer_type)?;
        map.serialize_entry("demographics", &self.demographics)?;
        if let Some(stage) = &self.stage {
            map.serialize_entry("stage", stage)?;
        }
        map.serialize_entry("clinical_attributes", &self.clinical_attributes)?;
        map.serialize_entry("biomarkers", &self.biomarkers)?;
        map.serialize_entry("tumor_sites", &self.tumor_sites)?;
        map.serialize_entry("treatments", &self.treatments)?;
        map.serialize_entry("lab_series", &self.lab_series)?;
        map.serialize_entry("sample_info", &self.sample_info)?;
        map.serialize_entry("outcome", &self.outcome)?;
        map.end()
    }
}

const KNOWN_FIELDS: &[&str] = &[
    "patient_id",
    "cancer_type",
    "demographics",
    "stage",
    "clinical_attributes",
    "biomarkers",
    "tumor_sites",
    "treatments",
    "lab_series",
    "sample_info",
    "outcome",
];

/// Parses one JSON document into a [`PatientRecord`].
///
/// Unrecognized top-level fields are kept in `clinical_attributes` (strings
/// verbatim, anything else as compact JSON). Lab series are sorted by day.
pub fn parse_record(raw: &str) -> Result<PatientRecord, RecordError> {
    let value: Value = serde_json::from_str(raw)?;
    record_from_value(&value)
}

pub fn record_from_value(value: &Value) -> Result<PatientRecord, RecordError> {
    let obj = value.as_object().ok_or_else(|| RecordError::MalformedRecord {
        id: None,
        reason: "record must be a JSON object".into(),
    })?;

    let patient_id = match obj.get("patient_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(RecordError::MalformedRecord {
                id: None,
                reason: "missing or empty patient_id".into(),
            })
        }
    };
    let malformed = |reason: String| RecordError::MalformedRecord {
        id: Some(patient_id.clone()),
        reason,
    };

    let outcome = match obj.get("outcome") {
        Some(v) => SurvivalOutcome::from_value(v).map_err(malformed)?,
        None => return Err(malformed("missing outcome".into())),
    };

    let cancer_type = match obj.get("cancer_type") {
        Some(Value::String(s)) => s.parse().unwrap(),
        None | Some(Value::Null) => CancerType::Other("Unknown".into()),
        Some(_) => return Err(type_error("cancer_type", "expected a string")),
    };

    let demographics = match obj.get("demographics") {
        None | Some(Value::Null) => Demographics::default(),
        Some(Value::Object(d)) => parse_demographics(d)?,
        Some(_) => return Err(type_error("demographics", "expected an object")),
    };

    let stage = match obj.get("stage") {
        None | Some(Value::Null) => None,
        Some(v) => Some(scalar_text(v)),
    };

    let mut clinical_attributes = string_map(obj.get("clinical_attributes"), "clinical_attributes")?;
    for (key, v) in obj {
        if !KNOWN_FIELDS.contains(&key.as_str()) && !v.is_null() {
            clinical_attributes.entry(key.clone()).or_insert_with(|| scalar_text(v));
        }
    }

    let biomarkers = string_map(obj.get("biomarkers"), "biomarkers")?;
    let sample_info = string_map(obj.get("sample_info"), "sample_info")?;

    let tumor_sites = match obj.get("tumor_sites") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.iter().map(scalar_text).collect(),
        Some(_) => return Err(type_error("tumor_sites", "expected an array")),
    };

    let treatments = match obj.get("treatments") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|t| parse_treatment(t).map_err(&malformed))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(type_error("treatments", "expected an array")),
    };

    let lab_series = match obj.get("lab_series") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => {
            let mut out = BTreeMap::new();
            for (marker, series) in m {
                out.insert(marker.clone(), parse_series(marker, series)?);
            }
            out
        }
        Some(_) => return Err(type_error("lab_series", "expected an object")),
    };

    Ok(PatientRecord {
        patient_id,
        cancer_type,
        demographics,
        stage,
        clinical_attributes,
        biomarkers,
        tumor_sites,
        treatments,
        lab_series,
        sample_info,
        outcome,
    })
}

/// Canonical JSON form; `parse_record(serialize_record(r)) == r`.
pub fn serialize_record(record: &PatientRecord) -> String {
    serde_json::to_string(record).expect("record serialization is infallible")
}

fn type_error(field: &str, reason: &str) -> RecordError {
    RecordError::TypeError {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_demographics(d: &Map<String, Value>) -> Result<Demographics, RecordError> {
    let age = match d.get("age") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let a = number_like(v).ok_or_else(|| type_error("demographics.age", "expected a number"))?;
            if !a.is_finite() || a < 0.0 {
                return Err(type_error("demographics.age", "age must be a non-negative number"));
            }
            Some(a.round() as u32)
        }
    };
    let sex = d.get("sex").filter(|v| !v.is_null()).map(|v| Sex::parse(&scalar_text(v)));
    let smoking_history = d
        .get("smoking_history")
        .filter(|v| !v.is_null())
        .map(scalar_text);
    Ok(Demographics {
        age,
        sex,
        smoking_history,
    })
}

fn parse_treatment(v: &Value) -> Result<TreatmentSpan, String> {
    let obj = v.as_object().ok_or("treatment must be an object")?;
    let modality_text = obj
        .get("modality")
        .and_then(Value::as_str)
        .ok_or("treatment.modality must be a string")?;
    let modality =
        Modality::parse(modality_text).ok_or_else(|| format!("unknown treatment modality `{modality_text}`"))?;
    let agents = match obj.get("agents") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.iter().map(scalar_text).collect(),
        Some(other) => vec![scalar_text(other)],
    };
    let day = |key: &str| -> Result<Option<i64>, String> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_i64()
                .map(Some)
                .ok_or_else(|| format!("treatment.{key} must be an integer day")),
        }
    };
    let day_start = day("day_start")?;
    let day_end = day("day_end")?;
    if let (Some(s), Some(e)) = (day_start, day_end) {
        if s > e {
            return Err(format!("treatment day_start {s} is after day_end {e}"));
        }
    }
    Ok(TreatmentSpan {
        modality,
        agents,
        day_start,
        day_end,
    })
}

fn parse_series(marker: &str, v: &Value) -> Result<Vec<LabPoint>, RecordError> {
    let field = format!("lab_series.{marker}");
    let items = v
        .as_array()
        .ok_or_else(|| type_error(&field, "expected an array of [day, value] points"))?;
    let mut points = Vec::with_capacity(items.len());
    for item in items {
        let (day, value) = match item {
            Value::Array(pair) if pair.len() == 2 => (&pair[0], &pair[1]),
            Value::Object(o) => match (o.get("day"), o.get("value")) {
                (Some(d), Some(v)) => (d, v),
                _ => return Err(type_error(&field, "point objects need `day` and `value`")),
            },
            _ => return Err(type_error(&field, "expected [day, value] or {day, value}")),
        };
        let day = day
            .as_i64()
            .ok_or_else(|| type_error(&field, "day must be an integer"))?;
        let value = value
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| type_error(&field, "lab value must be a finite number"))?;
        points.push(LabPoint { day, value });
    }
    points.sort_by_key(|p| p.day);
    Ok(points)
}

fn string_map(v: Option<&Value>, field: &str) -> Result<IndexMap<String, String>, RecordError> {
    match v {
        None | Some(Value::Null) => Ok(IndexMap::new()),
        Some(Value::Object(m)) => Ok(m
            .iter()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| (k.clone(), scalar_text(v)))
            .collect()),
        Some(_) => Err(type_error(field, "expected an object")),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn number_like(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Lowercases and drops everything that is not alphanumeric, so `PD-L1`,
/// `pd l1` and `PDL1` compare equal.
pub fn normalize_key(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Ordered attribute priorities per cancer type.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMap {
    general: Vec<String>,
    by_type: BTreeMap<String, Vec<String>>,
}

impl Default for AttributeMap {
    fn default() -> Self {
        AttributeMap::parse(DEFAULT_ATTRIBUTE_MAP).expect("bundled attribute map is valid")
    }
}

impl AttributeMap {
    pub fn parse(text: &str) -> Result<AttributeMap, RecordError> {
        let mut general = Vec::new();
        let mut by_type = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ty, attrs) = line.split_once(':').ok_or_else(|| RecordError::AttributeMap {
                line: idx + 1,
                reason: "expected `<cancer type>: <attribute>, ...`".into(),
            })?;
            let attrs: Vec<String> = attrs
                .split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect();
            let key = normalize_key(ty);
            if key.is_empty() {
                return Err(RecordError::AttributeMap {
                    line: idx + 1,
                    reason: "empty cancer type".into(),
                });
            }
            if key == "general" {
                general = attrs;
            } else if by_type.insert(key, attrs).is_some() {
                return Err(RecordError::AttributeMap {
                    line: idx + 1,
                    reason: format!("duplicate entry for `{}`", ty.trim()),
                });
            }
        }
        Ok(AttributeMap { general, by_type })
    }

    /// The type-specific list followed by the general set, without repeats.
    pub fn priorities(&self, cancer_type: &CancerType) -> Vec<&str> {
        let specific = self
            .by_type
            .get(&normalize_key(cancer_type.as_str()))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let mut seen = std::collections::HashSet::new();
        specific
            .iter()
            .chain(self.general.iter())
            .filter(|a| seen.insert(normalize_key(a)))
            .map(String::as_str)
            .collect()
    }
}

/// Attributes present on `record`, in the priority order of its cancer type.
/// Only values actually present on the record are returned.
pub fn select_attributes(record: &PatientRecord, map: &AttributeMap) -> Vec<(String, String)> {
    map.priorities(&record.cancer_type)
        .into_iter()
        .filter_map(|name| lookup_attribute(record, name).map(|v| (name.to_string(), v)))
        .collect()
}

fn lookup_attribute(record: &PatientRecord, name: &str) -> Option<String> {
    let key = normalize_key(name);
    let special = match key.as_str() {
        "cancerstage" | "stage" => record.stage.clone(),
        "currentage" | "age" => record.demographics.age.map(|a| a.to_string()),
        "sex" => record.demographics.sex.as_ref().map(|s| s.as_str().to_string()),
        "smokinghistory" => record.demographics.smoking_history.clone(),
        _ => None,
    };
    special.or_else(|| {
        record
            .biomarkers
            .iter()
            .chain(record.clinical_attributes.iter())
            .find(|(k, _)| normalize_key(k) == key)
            .map(|(_, v)| v.clone())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrendClass {
    Rising,
    Falling,
    Flat,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSummary {
    pub marker: String,
    pub slope: Option<f64>,
    pub n_points: usize,
    pub classification: TrendClass,
}

/// Ordinary-least-squares slope of value on day.
///
/// A series whose days are all identical has no spread to regress on; it
/// reports slope 0 and is classed as flat.
pub fn marker_trend(marker: &str, series: &[LabPoint], flat_threshold: f64) -> TrendSummary {
    let n = series.len();
    if n < 2 {
        return TrendSummary {
            marker: marker.to_string(),
            slope: None,
            n_points: n,
            classification: TrendClass::InsufficientData,
        };
    }
    let nf = n as f64;
    let mean_x = series.iter().map(|p| p.day as f64).sum::<f64>() / nf;
    let mean_y = series.iter().map(|p| p.value).sum::<f64>() / nf;
    let (sxy, sxx) = series.iter().fold((0.0, 0.0), |(sxy, sxx), p| {
        let dx = p.day as f64 - mean_x;
        (sxy + dx * (p.value - mean_y), sxx + dx * dx)
    });
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let classification = if slope.abs() <= flat_threshold {
        TrendClass::Flat
    } else if slope > 0.0 {
        TrendClass::Rising
    } else {
        TrendClass::Falling
    };
    TrendSummary {
        marker: marker.to_string(),
        slope: Some(slope),
        n_points: n,
        classification,
    }
}

/// Summary rendering options.
#[derive(Debug, Clone)]
pub struct SummaryOptions {
    pub attribute_map: AttributeMap,
    pub flat_threshold: f64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            attribute_map: AttributeMap::default(),
            flat_threshold: DEFAULT_FLAT_THRESHOLD,
        }
    }
}

/// Renders the patient summary. Sections appear in a fixed order and empty
/// sections are left out.
pub fn build_summary(record: &PatientRecord, opts: &SummaryOptions) -> String {
    let mut sections: Vec<String> = Vec::new();

    let attrs = select_attributes(record, &opts.attribute_map);
    if !attrs.is_empty() {
        let rendered: Vec<String> = attrs
            .iter()
            .map(|(name, value)| {
                if normalize_key(name) == "cancerstage" {
                    format!("{name} {value}")
                } else {
                    format!("{name}={value}")
                }
            })
            .collect();
        sections.push(format!("Clinical Attributes: {}", rendered.join("; ")));
    }

    if !record.tumor_sites.is_empty() {
        sections.push(format!("Tumor Sites: {}", record.tumor_sites.join(", ")));
    }

    if !record.treatments.is_empty() {
        let mut block = String::from("Treatments:");
        for t in &record.treatments {
            block.push_str("\n- ");
            block.push_str(&render_treatment(t));
        }
        sections.push(block);
    }

    if !record.sample_info.is_empty() {
        let mut block = format!(
            "Sample-Specific Information ({}):",
            record.cancer_type.display_name()
        );
        for (k, v) in &record.sample_info {
            block.push_str(&format!("\n- {k}: {v}"));
        }
        sections.push(block);
    }

    if !record.lab_series.is_empty() {
        let mut block = String::from("Key Tumor Markers:");
        for (marker, series) in &record.lab_series {
            let trend = marker_trend(marker, series, opts.flat_threshold);
            block.push_str("\n- ");
            block.push_str(&trend_phrase(&trend));
        }
        sections.push(block);
    }

    sections.join("\n")
}

fn render_treatment(t: &TreatmentSpan) -> String {
    let days = match (t.day_start, t.day_end) {
        (Some(s), Some(e)) if s != e => Some(format!("{s}-{e}")),
        (Some(d), _) | (None, Some(d)) => Some(d.to_string()),
        (None, None) => None,
    };
    let heading = t.modality.heading();
    match (t.agents.is_empty(), days) {
        (false, Some(days)) => format!("{heading}: {}, Days: {days}", t.agents.join(", ")),
        (false, None) => format!("{heading}: {}", t.agents.join(", ")),
        (true, Some(days)) => format!("{heading}: Days {days}"),
        (true, None) => heading.to_string(),
    }
}

fn trend_phrase(t: &TrendSummary) -> String {
    let points = if t.n_points == 1 { "measurement" } else { "measurements" };
    match (t.classification, t.slope) {
        (TrendClass::InsufficientData, _) | (_, None) => {
            format!("{}: insufficient data ({} {points})", t.marker, t.n_points)
        }
        (class, Some(slope)) => {
            let word = match class {
                TrendClass::Rising => "rising",
                TrendClass::Falling => "falling",
                _ => "stable",
            };
            format!(
                "{}: {word} (slope {slope:+.4} per day over {} {points})",
                t.marker, t.n_points
            )
        }
    }
}

const INSTRUCTION_HEAD: &str = "You are a cancer clinical outcome prediction model. Based on the patient data provided, predict the treatment outcome. Focus on key clinical factors such as disease stage, tumor site(s), patient age, smoking history, cancer type, and treatment details. ";

const PREDICTION_FORMAT: &str = "<prediction>\nOverall Survival Status: '0:LIVING' or '1:DECEASED'  \nEstimated Overall Survival (months): [float value]\n</prediction>";

/// Instruction text for the chain-of-thought or prediction-only task.
pub fn instruction_text(cot_mode: bool) -> String {
    if cot_mode {
        format!(
            "{INSTRUCTION_HEAD}\n\nYour response should include:\n\
             1. Step-by-step reasoning using relevant clinical knowledge.\n\
             2. A concise comment on the patient's prognosis.\n\
             3. Final prediction in the specified format.\n\n\
             Format your response as follows:\n\
             <reasoning>\n[Step-by-step explanation]\n</reasoning>\n\n\
             <comment>\n[Prognosis summary]\n</comment>\n\n\
             {PREDICTION_FORMAT}"
        )
    } else {
        format!(
            "{INSTRUCTION_HEAD}\n\nYour response should include:\n\
             1. Final prediction in the specified format.\n\n\
             Format your response as follows:\n\
             {PREDICTION_FORMAT}"
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub summary: String,
    pub cot_mode: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<SurvivalOutcome>,
}

impl PromptBundle {
    /// Full prompt text in instruction/input layout.
    pub fn render(&self) -> String {
        format!(
            "### Instruction:\n{}\n\n### Input:\n{}\n",
            self.instruction, self.summary
        )
    }
}

pub fn build_prompt(record: &PatientRecord, cot_mode: bool, opts: &SummaryOptions) -> PromptBundle {
    PromptBundle {
        instruction: instruction_text(cot_mode),
        summary: build_summary(record, opts),
        cot_mode,
        target: Some(record.outcome),
    }
}

/// Serialized prediction block used as the supervised target.
pub fn target_text(outcome: &SurvivalOutcome) -> String {
    format!(
        "Overall Survival Status: {}\nEstimated Overall Survival (months): {}",
        outcome.status.label(),
        format_months(outcome.months)
    )
}

/// One decimal place, matching the model outputs (`27.9`, `33.0`).
pub fn format_months(months: f64) -> String {
    format!("{months:.1}")
}
