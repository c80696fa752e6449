//! Uniform access to completion and embedding backends.
//!
//! The [`Gateway`] owns a registry of backends, applies retries with
//! exponential backoff, bounds in-flight calls per backend and records one
//! audit entry per logical request.

mod limiter;
pub mod offline;
pub mod remote;
pub mod template;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::json_digest;
use crate::store::{ArtifactKey, ArtifactKind, Store};

pub use limiter::Limiter;
pub use template::{PromptTemplate, TemplateError};

/// Temperature used for every ranking prompt.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("no backend registered under `{0}`")]
    UnknownBackend(String),
    #[error("backend `{backend}` unavailable after {attempts} attempt(s): {detail}")]
    BackendUnavailable { backend: String, attempts: u32, detail: String },
    #[error("response from `{backend}` has {tokens} tokens, limit is {limit}")]
    ResponseTooLong { backend: String, tokens: usize, limit: usize },
    #[error("authentication with `{backend}` failed: {detail}")]
    AuthFailure { backend: String, detail: String },
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient: {0}")]
    Transient(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("auth: {0}")]
    Auth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_output: usize,
    pub backend_id: String,
    /// Template the user prompt was rendered from, when known. Offline
    /// backends key canned responses on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bindings: BTreeMap<String, String>,
}

impl CompletionRequest {
    pub fn new(backend_id: impl Into<String>, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            seed: None,
            max_output: 1024,
            backend_id: backend_id.into(),
            template_id: None,
            bindings: BTreeMap::new(),
        }
    }

    /// Renders `template` into the user prompt and remembers the bindings.
    pub fn from_template(
        backend_id: impl Into<String>,
        system_prompt: impl Into<String>,
        template: &PromptTemplate,
        bindings: BTreeMap<String, String>,
    ) -> Result<Self, TemplateError> {
        let user_prompt = template.render(&bindings)?;
        let mut request = Self::new(backend_id, system_prompt, user_prompt);
        request.template_id = Some(template.template_id.clone());
        request.bindings = bindings;
        Ok(request)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_output(mut self, max_output: usize) -> Self {
        self.max_output = max_output;
        self
    }

    /// SHA-256 over the request's canonical JSON form.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompts must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
    pub request_digest: String,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    #[default]
    L2Normalized,
    Raw,
}

/// Row-per-input embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub vectors: Vec<Vec<f64>>,
    pub d: usize,
    pub norm_policy: NormPolicy,
    /// Rows that were all zeros and were left unnormalized.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_rows: Vec<usize>,
}

impl EmbeddingMatrix {
    pub fn from_rows(mut vectors: Vec<Vec<f64>>, norm_policy: NormPolicy) -> Self {
        let d = vectors.first().map_or(0, Vec::len);
        let mut zero_rows = Vec::new();
        for (i, row) in vectors.iter_mut().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero_rows.push(i);
            } else if norm_policy == NormPolicy::L2Normalized {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Self { vectors, d, norm_policy, zero_rows }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Raw, unnormalized vectors, one per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: String,
    pub embedding_backend: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: offline::SCRIPTED_BACKEND_ID.to_string(),
            embedding_backend: offline::HASHING_BACKEND_ID.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_parallel: 4,
            retry_limit: 3,
            backoff_base_ms: 200,
        }
    }
}

/// One audit entry per logical request, whatever the number of attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_digest: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub attempt_count: u32,
    pub latency_ms: u64,
    pub outcome: String,
}

pub const AUDIT_DATASET: &str = "gateway";

pub struct Gateway {
    completions: HashMap<String, Arc<dyn CompletionBackend>>,
    embedders: HashMap<String, Arc<dyn EmbeddingBackend>>,
    limiters: parking_lot::Mutex<HashMap<String, Arc<Limiter>>>,
    config: GatewayConfig,
    audit: Option<Arc<Store>>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            completions: HashMap::new(),
            embedders: HashMap::new(),
            limiters: parking_lot::Mutex::new(HashMap::new()),
            config,
            audit: None,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn with_audit(mut self, store: Arc<Store>) -> Self {
        self.audit = Some(store);
        self
    }

    pub fn register_completion(&mut self, id: impl Into<String>, backend: Arc<dyn CompletionBackend>) {
        self.completions.insert(id.into(), backend);
    }

    pub fn register_embedding(&mut self, id: impl Into<String>, backend: Arc<dyn EmbeddingBackend>) {
        self.embedders.insert(id.into(), backend);
    }

    pub fn has_completion_backend(&self, id: &str) -> bool {
        self.completions.contains_key(id)
    }

    fn limiter(&self, backend_id: &str) -> Arc<Limiter> {
        self.limiters
            .lock()
            .entry(backend_id.to_string())
            .or_insert_with(|| Arc::new(Limiter::new(self.config.max_parallel.max(1))))
            .clone()
    }

    fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.config.backoff_base_ms.saturating_mul(1u64 << retry.min(16)))
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let backend = self
            .completions
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?
            .clone();
        let limiter = self.limiter(&request.backend_id);
        let digest = request.digest();
        let started = Instant::now();

        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            let result = {
                let _permit = limiter.acquire();
                backend.complete(request)
            };
            match result {
                Ok(text) => break Ok(text),
                Err(BackendError::Transient(detail)) if attempts <= self.config.retry_limit => {
                    tracing::debug!(backend = %request.backend_id, attempts, %detail, "retrying");
                    // Permit is released before sleeping so other requests proceed.
                    std::thread::sleep(self.backoff(attempts - 1));
                }
                Err(BackendError::Transient(detail) | BackendError::Unavailable(detail)) => {
                    break Err(GatewayError::BackendUnavailable {
                        backend: request.backend_id.clone(),
                        attempts,
                        detail,
                    })
                }
                Err(BackendError::Auth(detail)) => {
                    break Err(GatewayError::AuthFailure { backend: request.backend_id.clone(), detail })
                }
            }
        };
        let outcome = outcome.and_then(|text| {
            let tokens = text.split_whitespace().count();
            if tokens > request.max_output {
                Err(GatewayError::ResponseTooLong { backend: request.backend_id.clone(), tokens, limit: request.max_output })
            } else {
                Ok(text)
            }
        });
        let latency = started.elapsed();
        self.record_audit(request, &digest, attempts, latency, &outcome);
        outcome.map(|text| CompletionResult {
            text,
            backend_id: request.backend_id.clone(),
            latency,
            attempt_count: attempts,
            request_digest: digest,
        })
    }

    fn record_audit(
        &self,
        request: &CompletionRequest,
        digest: &str,
        attempts: u32,
        latency: Duration,
        outcome: &Result<String, GatewayError>,
    ) {
        let Some(store) = &self.audit else { return };
        let record = AuditRecord {
            request_digest: digest.to_string(),
            backend_id: request.backend_id.clone(),
            template_id: request.template_id.clone(),
            attempt_count: attempts,
            latency_ms: latency.as_millis() as u64,
            outcome: match outcome {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            },
        };
        let key = ArtifactKey::new(ArtifactKind::Audit, AUDIT_DATASET, digest);
        if let Err(e) = store.put_artifact(&key, &record) {
            tracing::warn!(error = %e, "failed to persist gateway audit record");
        }
    }

    pub fn embed(&self, texts: &[String], backend_id: &str, policy: NormPolicy) -> Result<EmbeddingMatrix, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let backend = self
            .embedders
            .get(backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(backend_id.to_string()))?
            .clone();
        let limiter = self.limiter(backend_id);
        let mut attempts = 0u32;
        let rows = loop {
            attempts += 1;
            let result = {
                let _permit = limiter.acquire();
                backend.embed(texts)
            };
            match result {
                Ok(rows) => break rows,
                Err(BackendError::Transient(_)) if attempts <= self.config.retry_limit => {
                    std::thread::sleep(self.backoff(attempts - 1));
                }
                Err(BackendError::Transient(detail) | BackendError::Unavailable(detail)) => {
                    return Err(GatewayError::BackendUnavailable { backend: backend_id.to_string(), attempts, detail })
                }
                Err(BackendError::Auth(detail)) => {
                    return Err(GatewayError::AuthFailure { backend: backend_id.to_string(), detail })
                }
            }
        };
        if rows.len() != texts.len() {
            return Err(GatewayError::BackendUnavailable {
                backend: backend_id.to_string(),
                attempts,
                detail: format!("expected {} vectors, got {}", texts.len(), rows.len()),
            });
        }
        Ok(EmbeddingMatrix::from_rows(rows, policy))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    use super::offline::{HashingEmbedder, ScriptedBackend};
    use super::*;

    struct Flaky {
        failures_left: AtomicU32,
        calls: AtomicU32,
    }

    impl CompletionBackend for Flaky {
        fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(BackendError::Transient("503".into()));
            }
            Ok("fine".into())
        }
    }

    fn fast_config() -> GatewayConfig {
        GatewayConfig { backoff_base_ms: 1, ..GatewayConfig::default() }
    }

    #[test]
    fn retries_transient_failures() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(tmp.path()).unwrap());
        let flaky = Arc::new(Flaky { failures_left: AtomicU32::new(2), calls: AtomicU32::new(0) });
        let mut gw = Gateway::new(fast_config()).with_audit(store.clone());
        gw.register_completion("flaky", flaky.clone());
        let request = CompletionRequest::new("flaky", "sys", "user");
        let result = gw.complete(&request).unwrap();
        assert_eq!(result.text, "fine");
        assert_eq!(result.attempt_count, 3);

        // One logical audit entry carrying the attempt count.
        let runs = store.list_runs(ArtifactKind::Audit, AUDIT_DATASET).unwrap();
        assert_eq!(runs, vec![result.request_digest.clone()]);
        let audit: AuditRecord = store
            .get_artifact(&ArtifactKey::new(ArtifactKind::Audit, AUDIT_DATASET, &result.request_digest))
            .unwrap();
        assert_eq!(audit.attempt_count, 3);
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let flaky = Arc::new(Flaky { failures_left: AtomicU32::new(100), calls: AtomicU32::new(0) });
        let mut gw = Gateway::new(GatewayConfig { retry_limit: 2, ..fast_config() });
        gw.register_completion("flaky", flaky.clone());
        let err = gw.complete(&CompletionRequest::new("flaky", "sys", "user")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 3, .. }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unknown_backend_and_empty_prompt() {
        let gw = Gateway::new(fast_config());
        assert!(matches!(
            gw.complete(&CompletionRequest::new("nope", "s", "u")),
            Err(GatewayError::UnknownBackend(_))
        ));
        let mut gw = Gateway::new(fast_config());
        gw.register_completion("s", Arc::new(ScriptedBackend::new()));
        assert!(matches!(gw.complete(&CompletionRequest::new("s", "s", "  ")), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn response_too_long() {
        let mut scripted = ScriptedBackend::new();
        let request = CompletionRequest::new("s", "sys", "user").with_max_output(3);
        scripted.insert_digest(request.digest(), "one two three four");
        let mut gw = Gateway::new(fast_config());
        gw.register_completion("s", Arc::new(scripted));
        assert!(matches!(gw.complete(&request), Err(GatewayError::ResponseTooLong { tokens: 4, limit: 3, .. })));
    }

    #[test]
    fn bounded_parallelism() {
        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl CompletionBackend for Slow {
            fn complete(&self, _r: &CompletionRequest) -> Result<String, BackendError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok("ok".into())
            }
        }
        let slow = Arc::new(Slow { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let mut gw = Gateway::new(GatewayConfig { max_parallel: 2, ..fast_config() });
        gw.register_completion("slow", slow.clone());
        std::thread::scope(|s| {
            for i in 0..12 {
                let gw = &gw;
                s.spawn(move || gw.complete(&CompletionRequest::new("slow", "s", format!("u{i}"))).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn embedding_rows_follow_input_order() {
        let mut gw = Gateway::new(fast_config());
        gw.register_embedding("hash", Arc::new(HashingEmbedder::default()));
        let texts: Vec<String> = vec!["a".into(), "a".into(), "ride to work".into(), "".into()];
        let m = gw.embed(&texts, "hash", NormPolicy::L2Normalized).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.d, 256);
        assert_eq!(m.vectors[0], m.vectors[1]);
        for (i, row) in m.vectors.iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if m.zero_rows.contains(&i) {
                assert_eq!(norm, 0.0);
            } else {
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(m.zero_rows, vec![3]);
        assert!(matches!(gw.embed(&[], "hash", NormPolicy::Raw), Err(GatewayError::EmptyInput)));
        assert!(matches!(gw.embed(&texts, "other", NormPolicy::Raw), Err(GatewayError::UnknownBackend(_))));
    }

    #[test]
    fn cosine_bounds() {
        let a = [1.0, 2.0, 3.0];
        let b = [-1.0, 0.5, 2.0];
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&a, &b), cosine_similarity(&b, &a));
        assert_eq!(cosine_similarity(&a, &[0.0, 0.0, 0.0]), 0.0);
    }
}
