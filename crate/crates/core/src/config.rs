//! Pipeline configuration: TOML file, then environment, then explicit
//! overrides (command-line flags), each layer replacing the previous.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{CachedProvider, EmbedError, EmbeddingProvider, OfflineProvider, RemoteConfig, RemoteProvider};
use crate::grpo::GrpoConfig;
use crate::policy::OptimizerKind;
use crate::records::DEFAULT_FLAT_THRESHOLD;
use crate::reward::RewardConfig;
use crate::sft::CotDivergence;
use crate::toy::ToyTrainConfig;
use crate::trace::SchemaProfile;

pub const ENV_EMBED_URL: &str = "ONCOALIGN_EMBED_URL";
pub const ENV_CONFIG: &str = "ONCOALIGN_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Patient records, one JSON object per line.
    pub dataset: Option<PathBuf>,
    /// `{id, vector}` lines for exemplar selection.
    pub embeddings: Option<PathBuf>,
    /// Model outputs: `{id, output_text, reference_trace?}` lines.
    pub outputs: Option<PathBuf>,
    /// Attribute-priority table; the bundled table when absent.
    pub attribute_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdStartSettings {
    /// `None` selects `min(ceil(n / 4), 64)`.
    pub k: Option<usize>,
    pub max_iters: usize,
    pub unit_norm: bool,
}

impl Default for ColdStartSettings {
    fn default() -> Self {
        ColdStartSettings {
            k: None,
            max_iters: 100,
            unit_norm: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySettings {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub inner_epochs: usize,
    pub old_refresh_every: usize,
    pub ref_refresh_every: Option<usize>,
    pub warmup_steps: usize,
    pub warmup_learning_rate: f64,
}

impl Default for ToySettings {
    fn default() -> Self {
        let t = ToyTrainConfig::default();
        ToySettings {
            steps: t.steps,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            inner_epochs: t.inner_epochs,
            old_refresh_every: t.old_refresh_every,
            ref_refresh_every: t.ref_refresh_every,
            warmup_steps: 50,
            warmup_learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Held-out records only.
    #[default]
    Eval,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub split: EvalSplit,
    pub profile: SchemaProfile,
    pub rescale_baseline: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            split: EvalSplit::Eval,
            profile: SchemaProfile::ClinicalSchema,
            rescale_baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub split_ratio: f64,
    pub seed: u64,
    pub flat_threshold: f64,
    pub lambda_cot: f64,
    pub cot_divergence: CotDivergence,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub toy: ToySettings,
    pub coldstart: ColdStartSettings,
    pub eval: EvalSettings,
    pub provider: ProviderSettings,
    /// Stages run by `run`; empty means all.
    pub stages: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            split_ratio: 0.8,
            seed: 42,
            flat_threshold: DEFAULT_FLAT_THRESHOLD,
            lambda_cot: 1.0,
            cot_divergence: CotDivergence::CrossEntropy,
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            toy: ToySettings::default(),
            coldstart: ColdStartSettings::default(),
            eval: EvalSettings::default(),
            provider: ProviderSettings::default(),
            stages: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.dataset,
            &mut self.paths.embeddings,
            &mut self.paths.outputs,
            &mut self.paths.attribute_map,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Applies environment settings. A set embedding URL selects the remote
    /// provider.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(url) = var(ENV_EMBED_URL).filter(|u| !u.trim().is_empty()) {
            self.provider.kind = ProviderKind::Remote;
            self.provider.remote.base_url = url;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(ConfigError::Invalid(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if !(self.lambda_cot >= 0.0 && self.lambda_cot.is_finite()) {
            return Err(ConfigError::Invalid(format!("lambda_cot {} must be finite and >= 0", self.lambda_cot)));
        }
        if !(self.reward.months_tolerance >= 0.0 && self.reward.months_tolerance.is_finite()) {
            return Err(ConfigError::Invalid("reward.months_tolerance must be finite and >= 0".into()));
        }
        if !(self.flat_threshold >= 0.0 && self.flat_threshold.is_finite()) {
            return Err(ConfigError::Invalid("flat_threshold must be finite and >= 0".into()));
        }
        self.grpo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Remote providers are wrapped in a per-run cache.
    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
        Ok(match self.provider.kind {
            ProviderKind::Offline => Box::new(OfflineProvider::default()),
            ProviderKind::Remote => Box::new(CachedProvider::new(RemoteProvider::new(self.provider.remote.clone())?)),
        })
    }

    /// Identifies the provider without constructing it.
    pub fn embedding_provider_id(&self) -> String {
        match self.provider.kind {
            ProviderKind::Offline => OfflineProvider::default().provider_id(),
            ProviderKind::Remote => self
                .provider
                .remote
                .provider_id
                .clone()
                .unwrap_or_else(|| format!("remote:{}", self.provider.remote.base_url)),
        }
    }

    pub fn toy_train_config(&self) -> ToyTrainConfig {
        ToyTrainConfig {
            steps: self.toy.steps,
            learning_rate: self.toy.learning_rate,
            optimizer: self.toy.optimizer,
            inner_epochs: self.toy.inner_epochs,
            old_refresh_every: self.toy.old_refresh_every,
            ref_refresh_every: self.toy.ref_refresh_every,
            seed: self.seed,
            grpo: self.grpo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = PipelineConfig::from_toml("", Path::new("/base")).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!((cfg.split_ratio, cfg.seed), (0.8, 42));
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let cfg = PipelineConfig::from_toml("[paths]\ndataset = \"data/r.jsonl\"\n", Path::new("/base")).unwrap();
        assert_eq!(cfg.paths.dataset, Some(PathBuf::from("/base/data/r.jsonl")));
    }

    #[test]
    fn env_url_selects_remote() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_env(|k| (k == ENV_EMBED_URL).then(|| "http://embed:9000".to_string()));
        assert_eq!(cfg.provider.kind, ProviderKind::Remote);
        assert_eq!(cfg.provider.remote.base_url, "http://embed:9000");
    }

    #[test]
    fn nested_sections_parse() {
        let text = "seed = 7\n[grpo]\nkl_coeff = 0.5\n[reward]\ninteger_policy = \"any_finite_numeric\"\n";
        let cfg = PipelineConfig::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(cfg.grpo.kl_coeff, 0.5);
        assert_eq!(cfg.grpo.group_size, 8);
        assert_eq!(cfg.reward.integer_policy, crate::reward::IntegerPolicy::AnyFiniteNumeric);
        assert_eq!(cfg.toy_train_config().seed, 7);
    }

    #[test]
    fn validation() {
        let bad = PipelineConfig {
            split_ratio: 1.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PipelineConfig::from_toml("bogus = 1", Path::new(".")).is_err());
    }
}
