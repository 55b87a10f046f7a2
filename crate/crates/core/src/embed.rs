//! Text embedding providers and cosine similarity.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const OFFLINE_DIM: usize = 256;
pub const OFFLINE_PROVIDER_ID: &str = "offline-hash-256";
pub const REMOTE_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("text {index} is empty")]
    EmptyText { index: usize },
    #[error("request holds no texts")]
    EmptyRequest,
    #[error("cosine of a zero vector")]
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hint: Option<String>,
}

impl EmbeddingRequest {
    pub fn new<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        EmbeddingRequest {
            texts: texts.into_iter().map(Into::into).collect(),
            model_hint: None,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.texts.is_empty() {
            return Err(EmbedError::EmptyRequest);
        }
        match self.texts.iter().position(|t| t.trim().is_empty()) {
            Some(index) => Err(EmbedError::EmptyText { index }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub vectors: Vec<Vec<f64>>,
    pub provider_id: String,
}

/// Implementations must tolerate concurrent `embed` calls.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut r = self.embed(&EmbeddingRequest::new([text]))?;
        Ok(r.vectors.remove(0))
    }
}

/// `u.v / (|u| |v|)`, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Lowercased alphanumeric runs.
pub fn offline_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bucket of a token: first 8 bytes of its SHA-256, big-endian, mod `dim`.
pub fn offline_bucket(token: &str, dim: usize) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) % dim as u64) as usize
}

/// Deterministic hashed bag-of-tokens vectors, L2-normalized. Not
/// semantically meaningful.
#[derive(Debug, Clone, Copy)]
pub struct OfflineProvider {
    pub dim: usize,
}

impl Default for OfflineProvider {
    fn default() -> Self {
        OfflineProvider { dim: OFFLINE_DIM }
    }
}

impl OfflineProvider {
    fn vector(&self, text: &str, index: usize) -> Result<Vec<f64>, EmbedError> {
        let tokens = offline_tokens(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText { index });
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[offline_bucket(t, self.dim)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

impl EmbeddingProvider for OfflineProvider {
    fn provider_id(&self) -> String {
        if self.dim == OFFLINE_DIM {
            OFFLINE_PROVIDER_ID.to_string()
        } else {
            format!("offline-hash-{}", self.dim)
        }
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, EmbedError> {
        request.validate()?;
        let vectors = request
            .texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.vector(t, i))
            .collect::<Result<_, _>>()?;
        Ok(EmbeddingResponse {
            vectors,
            provider_id: self.provider_id(),
        })
    }
}

/// Fixed text-to-vector table.
#[derive(Debug, Clone, Default)]
pub struct StaticProvider {
    pub table: HashMap<String, Vec<f64>>,
}

impl StaticProvider {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<f64>)>) -> Self {
        StaticProvider {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

impl EmbeddingProvider for StaticProvider {
    fn provider_id(&self) -> String {
        "static".to_string()
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, EmbedError> {
        request.validate()?;
        let vectors = request
            .texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbedError::ProviderUnavailable(format!("no vector for {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(EmbeddingResponse {
            vectors,
            provider_id: self.provider_id(),
        })
    }
}

/// Per-run memoization keyed by text.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, EmbedError> {
        request.validate()?;
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            request
                .texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.inner.embed(&EmbeddingRequest {
                texts: missing.clone(),
                model_hint: request.model_hint.clone(),
            })?;
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in missing.into_iter().zip(fetched.vectors) {
                cache.insert(t, v);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(EmbeddingResponse {
            vectors: request.texts.iter().map(|t| cache[t].clone()).collect(),
            provider_id: self.inner.provider_id(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Initial backoff; doubles after each failed attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub batch_size: usize,
    pub provider_id: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8080".to_string(),
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 100,
            max_in_flight: 4,
            batch_size: REMOTE_BATCH_SIZE,
            provider_id: None,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {base_url}/embed`. Requests are chunked to
/// `batch_size` texts; at most `max_in_flight` requests run at once across
/// all callers.
pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

enum Attempt {
    Retry(String),
    Fatal(EmbedError),
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        let permits = config.max_in_flight.max(1);
        Ok(RemoteProvider {
            config,
            client,
            in_flight: Semaphore {
                permits: Mutex::new(permits),
                cv: Condvar::new(),
            },
        })
    }

    fn url(&self) -> String {
        format!("{}/embed", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client
            .post(self.url())
            .json(&WireRequest { texts })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let body: WireResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(EmbedError::ProviderUnavailable(format!("malformed body: {e}"))))?;
        if body.vectors.len() != texts.len() {
            return Err(Attempt::Fatal(EmbedError::DimensionMismatch(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            ))));
        }
        if body.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Attempt::Fatal(EmbedError::ProviderUnavailable("non-finite vector entry".into())));
        }
        Ok(body.vectors)
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut backoff = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(backoff));
                backoff = backoff.saturating_mul(2);
            }
            match self.attempt(texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, error = %msg, "embedding request failed");
                    last = msg;
                }
            }
        }
        Err(EmbedError::ProviderUnavailable(format!(
            "{} after {} attempts",
            last,
            self.config.max_retries + 1
        )))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn provider_id(&self) -> String {
        self.config
            .provider_id
            .clone()
            .unwrap_or_else(|| format!("remote:{}", self.config.base_url))
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, EmbedError> {
        request.validate()?;
        let mut vectors = Vec::with_capacity(request.texts.len());
        for chunk in request.texts.chunks(self.config.batch_size.max(1)) {
            vectors.extend(self.embed_chunk(chunk)?);
        }
        if let Some(first) = vectors.first() {
            let d = first.len();
            if let Some(i) = vectors.iter().position(|v| v.len() != d) {
                return Err(EmbedError::DimensionMismatch(format!(
                    "vector {i} has dimension {}, expected {d}",
                    vectors[i].len()
                )));
            }
        }
        Ok(EmbeddingResponse {
            vectors,
            provider_id: self.provider_id(),
        })
    }
}
