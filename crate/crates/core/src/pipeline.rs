//! Staged pipeline: ingest, prompts, score, coldstart, train-toy, eval,
//! report.
//!
//! Each stage writes its artifacts and a `manifest.json` into
//! `<out>/<stage>/`. The manifest records SHA-256 hashes of the stage's
//! inputs, parameters and outputs; a stage whose inputs and parameters are
//! unchanged is skipped. Artifacts contain no timestamps or absolute paths,
//! so identical inputs produce identical trees.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coldstart::{default_k, kmeans, select_exemplars, EmbeddedCorpus, EmbeddingRow};
use crate::config::{ConfigError, EvalSplit, PipelineConfig};
use crate::jsonl::{read_jsonl, read_jsonl_with, to_jsonl_string};
use crate::metrics::report::{build_report, write_samples_csv, EvalRecord, ReportOptions};
use crate::policy::ToyPolicy;
use crate::records::{
    build_prompt, build_summary, instruction_text, parse_record, record_from_value, serialize_record,
    target_text, AttributeMap, PatientRecord, SummaryOptions,
};
use crate::reward::{total_reward, RewardBreakdown};
use crate::sft::TrainingPair;
use crate::toy::{supervised_warmup, trailing_means, train_toy_policy, FormattedAnswerEnv, RewardEnv};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Prompts,
    Score,
    ColdStart,
    TrainToy,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Prompts,
        Stage::Score,
        Stage::ColdStart,
        Stage::TrainToy,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Prompts => "prompts",
            Stage::Score => "score",
            Stage::ColdStart => "coldstart",
            Stage::TrainToy => "train-toy",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Stages whose artifacts must exist before this one runs.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Prompts | Stage::Score | Stage::Eval => &[Stage::Ingest],
            Stage::Report => &[Stage::Eval],
            _ => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("preflight: {0}")]
    Preflight(String),
    #[error("preflight: {file} no longer matches the manifest of stage {stage}; remove {stage}/ to rebuild it")]
    Tampered { stage: Stage, file: String },
    #[error("preflight: stage {stage} needs {upstream} artifacts; run {upstream} first")]
    MissingUpstream { stage: Stage, upstream: Stage },
    #[error("output directory is locked by another run ({0})")]
    Locked(PathBuf),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("stage {stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stage: String,
    pub params_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

/// Seeded shuffle, then the first `round(ratio * n)` ids train. Both lists
/// are returned sorted.
pub fn split_dataset(ids: &[String], ratio: f64, seed: u64) -> Result<Split, PipelineError> {
    if ids.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PipelineError::Preflight(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * ids.len() as f64).round() as usize).min(ids.len());
    let mut train = shuffled[..n_train].to_vec();
    let mut eval = shuffled[n_train..].to_vec();
    train.sort();
    eval.sort();
    Ok(Split { seed, ratio, train, eval })
}

/// One line of the model-outputs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub id: String,
    pub output_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

type Artifacts = Vec<(&'static str, Vec<u8>)>;

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline { cfg, out: out.into() }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn artifact(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    /// Stages named in the config, or all of them.
    pub fn configured_stages(&self) -> Result<Vec<Stage>, PipelineError> {
        if self.cfg.stages.is_empty() {
            return Ok(Stage::ALL.to_vec());
        }
        self.cfg
            .stages
            .iter()
            .map(|s| Stage::from_name(s).ok_or_else(|| PipelineError::Preflight(format!("unknown stage `{s}`"))))
            .collect()
    }

    /// Runs `stages` in pipeline order after a preflight of every stage.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<StageReport>, PipelineError> {
        self.cfg.validate()?;
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let _lock = LockGuard::acquire(&self.out)?;
        let requested: BTreeSet<Stage> = stages.iter().copied().collect();
        self.preflight(&requested)?;
        let mut reports = Vec::new();
        for stage in requested {
            let status = self.run_stage(stage)?;
            tracing::info!(stage = stage.name(), ?status, "stage finished");
            reports.push(StageReport {
                stage: stage.name().to_string(),
                status,
            });
        }
        Ok(reports)
    }

    fn read_manifest(&self, stage: Stage) -> Result<Option<Manifest>, PipelineError> {
        let path = self.artifact(stage, MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|_| PipelineError::Tampered {
                stage,
                file: format!("{}/{MANIFEST}", stage.name()),
            })
    }

    fn external_inputs(&self, stage: Stage) -> Vec<(&'static str, Option<&PathBuf>)> {
        let p = &self.cfg.paths;
        match stage {
            Stage::Ingest => vec![("dataset", p.dataset.as_ref())],
            Stage::Score => vec![("outputs", p.outputs.as_ref())],
            Stage::ColdStart => vec![("embeddings", p.embeddings.as_ref())],
            Stage::Eval => vec![("outputs", p.outputs.as_ref())],
            _ => vec![],
        }
    }

    fn preflight(&self, requested: &BTreeSet<Stage>) -> Result<(), PipelineError> {
        for &stage in requested {
            for (name, path) in self.external_inputs(stage) {
                match path {
                    None => {
                        return Err(PipelineError::Preflight(format!(
                            "stage {stage} needs paths.{name} in the config"
                        )))
                    }
                    Some(p) if !p.is_file() => {
                        return Err(PipelineError::Preflight(format!(
                            "stage {stage}: {name} file {} does not exist",
                            p.display()
                        )))
                    }
                    _ => {}
                }
            }
            for &up in stage.upstream() {
                if !requested.contains(&up) && self.read_manifest(up)?.is_none() {
                    return Err(PipelineError::MissingUpstream { stage, upstream: up });
                }
            }
        }
        if let Some(map) = &self.cfg.paths.attribute_map {
            if !map.is_file() {
                return Err(PipelineError::Preflight(format!(
                    "attribute map {} does not exist",
                    map.display()
                )));
            }
        }
        for stage in Stage::ALL {
            if let Some(m) = self.read_manifest(stage)? {
                for (file, hash) in &m.outputs {
                    let path = self.artifact(stage, file);
                    if !path.is_file() || hash_file(&path)? != *hash {
                        return Err(PipelineError::Tampered {
                            stage,
                            file: format!("{}/{file}", stage.name()),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Upstream artifacts a stage reads, keyed `<stage>/<file>`.
    fn upstream_files(&self, stage: Stage) -> Vec<(Stage, &'static str)> {
        match stage {
            Stage::Prompts | Stage::Eval => vec![(Stage::Ingest, "records.jsonl"), (Stage::Ingest, "split.json")],
            Stage::Score => vec![(Stage::Ingest, "records.jsonl")],
            Stage::Report => {
                let mut files = vec![(Stage::Eval, "report.json")];
                for (s, f) in [
                    (Stage::Score, "scores.jsonl"),
                    (Stage::ColdStart, "exemplars.jsonl"),
                    (Stage::TrainToy, "train_log.jsonl"),
                ] {
                    if self.artifact(s, f).is_file() {
                        files.push((s, f));
                    }
                }
                files
            }
            _ => vec![],
        }
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut inputs = BTreeMap::new();
        for (name, path) in self.external_inputs(stage) {
            if let Some(p) = path {
                inputs.insert(name.to_string(), hash_file(p)?);
            }
        }
        if matches!(stage, Stage::Prompts | Stage::Eval) {
            if let Some(p) = &self.cfg.paths.attribute_map {
                inputs.insert("attribute_map".into(), hash_file(p)?);
            }
            if stage == Stage::Prompts {
                if let Some(p) = self.cfg.paths.outputs.as_ref().filter(|p| p.is_file()) {
                    inputs.insert("outputs".into(), hash_file(p)?);
                }
            }
        }
        for (s, f) in self.upstream_files(stage) {
            inputs.insert(format!("{}/{f}", s.name()), hash_file(&self.artifact(s, f))?);
        }
        Ok(inputs)
    }

    fn params(&self, stage: Stage) -> Value {
        let c = &self.cfg;
        match stage {
            Stage::Ingest => json!({"split_ratio": c.split_ratio, "seed": c.seed}),
            Stage::Prompts => json!({"flat_threshold": c.flat_threshold}),
            Stage::Score => json!({"reward": c.reward}),
            Stage::ColdStart => json!({"coldstart": c.coldstart, "seed": c.seed}),
            Stage::TrainToy => json!({"toy": c.toy, "grpo": c.grpo, "seed": c.seed}),
            Stage::Eval => json!({
                "eval": c.eval,
                "flat_threshold": c.flat_threshold,
                "provider": c.embedding_provider_id(),
            }),
            Stage::Report => json!({}),
        }
    }

    fn run_stage(&self, stage: Stage) -> Result<StageStatus, PipelineError> {
        let inputs = self.input_hashes(stage)?;
        let params_sha256 = sha256_hex(self.params(stage).to_string().as_bytes());
        if let Some(m) = self.read_manifest(stage)? {
            if m.version == MANIFEST_VERSION && m.inputs == inputs && m.params_sha256 == params_sha256 {
                return Ok(StageStatus::Skipped);
            }
        }
        let artifacts = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Prompts => self.prompts(),
            Stage::Score => self.score(),
            Stage::ColdStart => self.coldstart(),
            Stage::TrainToy => self.train_toy(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        }
        .map_err(|message| PipelineError::Stage { stage, message })?;

        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &artifacts {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io_err(&path))?;
            outputs.insert(name.to_string(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            stage: stage.name().to_string(),
            params_sha256,
            inputs,
            outputs,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, pretty(&manifest)).map_err(io_err(&path))?;
        Ok(StageStatus::Ran)
    }

    fn summary_options(&self) -> Result<SummaryOptions, String> {
        let attribute_map = match &self.cfg.paths.attribute_map {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                AttributeMap::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => AttributeMap::default(),
        };
        Ok(SummaryOptions {
            attribute_map,
            flat_threshold: self.cfg.flat_threshold,
        })
    }

    fn load_records(&self) -> Result<Vec<PatientRecord>, String> {
        read_jsonl_with(&self.artifact(Stage::Ingest, "records.jsonl"), |line| {
            parse_record(line).map_err(|e| e.to_string())
        })
        .map_err(|e| e.to_string())
    }

    fn load_split(&self) -> Result<Split, String> {
        let path = self.artifact(Stage::Ingest, "split.json");
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn load_outputs(&self) -> Result<Vec<ModelOutput>, String> {
        let path = self.cfg.paths.outputs.as_ref().ok_or("paths.outputs is not set")?;
        read_jsonl(path).map_err(|e| e.to_string())
    }

    fn ingest(&self) -> Result<Artifacts, String> {
        let path = self.cfg.paths.dataset.as_ref().ok_or("paths.dataset is not set")?;
        let records = read_jsonl_with(path, |line| {
            let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            record_from_value(&value).map_err(|e| {
                let id = value.get("patient_id").and_then(Value::as_str).unwrap_or("?");
                format!("record {id}: {e}")
            })
        })
        .map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.patient_id.as_str()) {
                return Err(format!("duplicate patient_id {}", r.patient_id));
            }
        }
        let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
        let split = split_dataset(&ids, self.cfg.split_ratio, self.cfg.seed).map_err(|e| e.to_string())?;
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&serialize_record(r));
            lines.push('\n');
        }
        Ok(vec![("records.jsonl", lines.into_bytes()), ("split.json", pretty(&split))])
    }

    fn prompts(&self) -> Result<Artifacts, String> {
        let records = self.load_records()?;
        let split = self.load_split()?;
        let opts = self.summary_options()?;
        let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
        let traces: HashMap<String, String> = match &self.cfg.paths.outputs {
            Some(p) if p.is_file() => self
                .load_outputs()?
                .into_iter()
                .filter_map(|o| o.reference_trace.map(|t| (o.id, t)))
                .collect(),
            _ => HashMap::new(),
        };
        let mut prompts = Vec::new();
        let mut pairs = Vec::new();
        for r in &records {
            let bundle = build_prompt(r, true, &opts);
            let in_train = train.contains(r.patient_id.as_str());
            let prompt_text = bundle.render();
            let target = target_text(&r.outcome);
            prompts.push(json!({
                "patient_id": r.patient_id,
                "split": if in_train { "train" } else { "eval" },
                "cot_mode": bundle.cot_mode,
                "prompt_text": prompt_text,
                "target_text": target,
            }));
            if in_train {
                pairs.push(TrainingPair {
                    prompt_text,
                    target_text: target,
                    teacher_trace_text: traces.get(&r.patient_id).cloned(),
                });
            }
        }
        Ok(vec![
            ("prompts.jsonl", to_jsonl_string(prompts).into_bytes()),
            ("training_pairs.jsonl", to_jsonl_string(pairs).into_bytes()),
        ])
    }

    fn score(&self) -> Result<Artifacts, String> {
        let records = self.load_records()?;
        let truth: HashMap<&str, _> = records.iter().map(|r| (r.patient_id.as_str(), r.outcome)).collect();
        let mut rows = Vec::new();
        for o in self.load_outputs()? {
            let t = truth
                .get(o.id.as_str())
                .ok_or_else(|| format!("sample {}: no patient record with this id", o.id))?;
            rows.push(ScoreRow {
                reward: total_reward(&o.output_text, t, &self.cfg.reward),
                id: o.id,
            });
        }
        Ok(vec![("scores.jsonl", to_jsonl_string(rows).into_bytes())])
    }

    fn coldstart(&self) -> Result<Artifacts, String> {
        let path = self.cfg.paths.embeddings.as_ref().ok_or("paths.embeddings is not set")?;
        let rows: Vec<EmbeddingRow> = read_jsonl(path).map_err(|e| e.to_string())?;
        let mut corpus = EmbeddedCorpus::from_rows(rows).map_err(|e| e.to_string())?;
        if self.cfg.coldstart.unit_norm {
            corpus = corpus.unit_normalized();
        }
        let k = self.cfg.coldstart.k.unwrap_or_else(|| default_k(corpus.len()));
        let clusters =
            kmeans(&corpus, k, self.cfg.coldstart.max_iters, self.cfg.seed).map_err(|e| e.to_string())?;
        let exemplars = select_exemplars(&corpus, &clusters);
        let summary = json!({
            "k": k,
            "n": corpus.len(),
            "iterations": clusters.iterations,
            "inertia": clusters.inertia,
            "inertia_history": clusters.inertia_history,
            "assignments": corpus.ids().iter().zip(&clusters.assignments)
                .map(|(id, c)| json!({"id": id, "cluster": c})).collect::<Vec<_>>(),
        });
        Ok(vec![
            ("exemplars.jsonl", to_jsonl_string(exemplars).into_bytes()),
            ("clusters.json", pretty(&summary)),
        ])
    }

    fn train_toy(&self) -> Result<Artifacts, String> {
        let env = FormattedAnswerEnv::default();
        let mut policy = ToyPolicy::new(env.vocab_size(), env.seq_len());
        let warm = supervised_warmup(
            &mut policy,
            &FormattedAnswerEnv::warmup_exemplars(),
            self.cfg.toy.warmup_steps,
            self.cfg.toy.warmup_learning_rate,
        )
        .map_err(|e| e.to_string())?;
        let out = train_toy_policy(&env, policy, &self.cfg.toy_train_config()).map_err(|e| e.to_string())?;
        let trailing = trailing_means(&out.log, 10);
        let summary = json!({
            "steps": out.log.len(),
            "warmup_steps": warm.len(),
            "warmup_final_loss": warm.last().map(|l| l.total),
            "final_trailing_mean_reward": trailing.last(),
            "first_step_reaching_2_0": trailing.iter().position(|&m| m >= 2.0),
            "vocabulary": FormattedAnswerEnv::vocabulary(),
            "params": out.policy.params(),
        });
        Ok(vec![
            ("train_log.jsonl", to_jsonl_string(&out.log).into_bytes()),
            ("policy.json", pretty(&summary)),
        ])
    }

    fn eval_records(&self) -> Result<Vec<EvalRecord>, String> {
        let records = self.load_records()?;
        let split = self.load_split()?;
        let opts = self.summary_options()?;
        let eval_ids: BTreeSet<&str> = match self.cfg.eval.split {
            EvalSplit::Eval => split.eval.iter().map(String::as_str).collect(),
            EvalSplit::All => records.iter().map(|r| r.patient_id.as_str()).collect(),
        };
        let mut outputs: HashMap<String, ModelOutput> = HashMap::new();
        for o in self.load_outputs()? {
            if outputs.contains_key(&o.id) {
                return Err(format!("sample {}: duplicate model output", o.id));
            }
            outputs.insert(o.id.clone(), o);
        }
        let instruction = instruction_text(true);
        Ok(records
            .iter()
            .filter(|r| eval_ids.contains(r.patient_id.as_str()))
            .map(|r| {
                // A record without an output is scored as a missing prediction.
                let out = outputs.get(&r.patient_id);
                EvalRecord {
                    id: r.patient_id.clone(),
                    cancer_type: r.cancer_type.as_str().to_string(),
                    output_text: out.map(|o| o.output_text.clone()).unwrap_or_default(),
                    truth_status: r.outcome.status,
                    truth_months: r.outcome.months,
                    reference_trace: out.and_then(|o| o.reference_trace.clone()),
                    summary_text: Some(build_summary(r, &opts)),
                    prompt_text: Some(instruction.clone()),
                }
            })
            .collect())
    }

    fn eval(&self) -> Result<Artifacts, String> {
        let records = self.eval_records()?;
        let provider = self.cfg.embedding_provider().map_err(|e| e.to_string())?;
        let opts = ReportOptions {
            profile: self.cfg.eval.profile,
            rescale_baseline: self.cfg.eval.rescale_baseline,
            default_prompt: instruction_text(true),
        };
        let (report, rows) = build_report(&records, provider.as_ref(), &opts);
        let mut csv = Vec::new();
        write_samples_csv(&rows, &mut csv).map_err(|e| e.to_string())?;
        Ok(vec![
            ("eval_input.jsonl", to_jsonl_string(&records).into_bytes()),
            ("report.json", pretty(&report)),
            ("samples.csv", csv),
        ])
    }

    fn report(&self) -> Result<Artifacts, String> {
        let read_json = |stage: Stage, file: &str| -> Result<Value, String> {
            let p = self.artifact(stage, file);
            let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
        };
        let evaluation = read_json(Stage::Eval, "report.json")?;
        let mut summary = serde_json::Map::new();
        summary.insert("evaluation".into(), evaluation.clone());

        let scores_path = self.artifact(Stage::Score, "scores.jsonl");
        let mut reward_line = None;
        if scores_path.is_file() {
            let rows: Vec<ScoreRow> = read_jsonl(&scores_path).map_err(|e| e.to_string())?;
            let n = rows.len().max(1) as f64;
            let mean = |f: fn(&RewardBreakdown) -> f64| rows.iter().map(|r| f(&r.reward)).sum::<f64>() / n;
            let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
            for r in &rows {
                *histogram.entry(format!("{:.1}", r.reward.total)).or_default() += 1;
            }
            let block = json!({
                "n": rows.len(),
                "mean_total": mean(|r| r.total),
                "mean_r_correct": mean(|r| r.r_correct),
                "mean_r_int": mean(|r| r.r_int),
                "mean_r_strict": mean(|r| r.r_strict),
                "mean_r_soft": mean(|r| r.r_soft),
                "total_histogram": histogram,
            });
            reward_line = Some(format!("- Mean reward: {:.4} over {} outputs", mean(|r| r.total), rows.len()));
            summary.insert("reward".into(), block);
        }
        let log_path = self.artifact(Stage::TrainToy, "train_log.jsonl");
        let mut train_line = None;
        if log_path.is_file() {
            let log: Vec<crate::toy::TrainLogRecord> = read_jsonl(&log_path).map_err(|e| e.to_string())?;
            let trailing = trailing_means(&log, 10);
            let last = trailing.last().copied().unwrap_or(0.0);
            summary.insert(
                "training".into(),
                json!({
                    "steps": log.len(),
                    "final_trailing_mean_reward": last,
                    "final_mean_kl": log.last().map(|r| r.mean_kl),
                }),
            );
            train_line = Some(format!("- Toy training: {} steps, final 10-step mean reward {last:.4}", log.len()));
        }
        let ex_path = self.artifact(Stage::ColdStart, "exemplars.jsonl");
        let mut cold_line = None;
        if ex_path.is_file() {
            let ex: Vec<crate::coldstart::Exemplar> = read_jsonl(&ex_path).map_err(|e| e.to_string())?;
            summary.insert(
                "coldstart".into(),
                json!({"n_exemplars": ex.len(), "ids": ex.iter().map(|e| &e.id).collect::<Vec<_>>()}),
            );
            cold_line = Some(format!("- Cold-start exemplars: {}", ex.len()));
        }

        let mut md = String::from("# Evaluation report\n\n");
        let get = |ptr: &str| evaluation.pointer(ptr).cloned().unwrap_or(Value::Null);
        let num = |ptr: &str| match get(ptr) {
            Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
            Value::Null => "n/a".to_string(),
            other => other.to_string(),
        };
        md.push_str(&format!(
            "- Samples: {} (scoreable {}, missing {})\n",
            get("/n_samples"),
            get("/missing/n_scoreable"),
            get("/missing/n_missing")
        ));
        md.push_str(&format!(
            "- Format: {} strict-valid, {} soft-valid\n",
            get("/format/n_strict_valid"),
            get("/format/n_soft_valid")
        ));
        md.push_str(&format!(
            "- Classification: macro P {} / R {} / F1 {}\n",
            num("/classification/macro_avg/precision"),
            num("/classification/macro_avg/recall"),
            num("/classification/macro_avg/f1")
        ));
        md.push_str(&format!(
            "- Regression: MAE {} / RMSE {}\n",
            num("/regression/mae"),
            num("/regression/rmse")
        ));
        md.push_str(&format!(
            "- Generation: BLEU {} / ROUGE-1 {} / ROUGE-2 {} / ROUGE-L {} / embedding F1 {}\n",
            num("/generation/bleu"),
            num("/generation/rouge1"),
            num("/generation/rouge2"),
            num("/generation/rougeL"),
            num("/generation/embed_f1")
        ));
        for line in [reward_line, train_line, cold_line].into_iter().flatten() {
            md.push_str(&line);
            md.push('\n');
        }
        if let Some(Value::Object(strata)) = evaluation.pointer("/cot_quality/by_cancer_type") {
            md.push_str("\n## Reasoning quality by cancer type\n\n");
            md.push_str("| Cancer type | n | Relevance | Min relevance | Coherence | Prompt overlap | Steps |\n");
            md.push_str("|---|---|---|---|---|---|---|\n");
            for (ty, s) in strata {
                let m = |k: &str| {
                    s.pointer(&format!("/{k}/mean"))
                        .and_then(Value::as_f64)
                        .map_or("n/a".into(), |v| format!("{v:.4}"))
                };
                md.push_str(&format!(
                    "| {ty} | {} | {} | {} | {} | {} | {} |\n",
                    s["n"],
                    m("avg_relevance"),
                    m("min_relevance"),
                    m("avg_coherence"),
                    m("max_prompt_overlap"),
                    m("n_steps")
                ));
            }
        }
        Ok(vec![
            ("summary.json", pretty(&Value::Object(summary))),
            ("report.md", md.into_bytes()),
        ])
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable artifact");
    bytes.push(b'\n');
    bytes
}
