//! Deterministic backends that need no network access.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use unicode_segmentation::UnicodeSegmentation;

use super::{BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend};
use crate::digest::json_digest;

pub const SCRIPTED_BACKEND_ID: &str = "scripted";
pub const HASHING_BACKEND_ID: &str = "hashing";

pub type Responder = Arc<dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync>;

/// Key for a canned response addressed by template and bindings rather than
/// by the full request.
pub fn fixture_key(template_id: &str, bindings: &BTreeMap<String, String>) -> String {
    format!("{template_id}:{}", json_digest(bindings))
}

/// Canned completions.
///
/// Lookup order: exact request digest, then [`fixture_key`] of the request's
/// template and bindings, then rule-based responders registered for the
/// template id. Anything else is reported as unavailable.
#[derive(Default, Clone)]
pub struct ScriptedBackend {
    by_digest: HashMap<String, String>,
    by_fixture: HashMap<String, String>,
    responders: HashMap<String, Vec<Responder>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.by_digest.insert(digest.into(), response.into());
    }

    pub fn insert_fixture(&mut self, key: impl Into<String>, response: impl Into<String>) {
        self.by_fixture.insert(key.into(), response.into());
    }

    pub fn with_fixture(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.insert_fixture(key, response);
        self
    }

    pub fn add_responder(&mut self, template_id: impl Into<String>, responder: Responder) {
        self.responders.entry(template_id.into()).or_default().push(responder);
    }

    pub fn with_responder(
        mut self,
        template_id: impl Into<String>,
        responder: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.add_responder(template_id, Arc::new(responder));
        self
    }

    fn lookup(&self, request: &CompletionRequest) -> Option<String> {
        if let Some(text) = self.by_digest.get(&request.digest()) {
            return Some(text.clone());
        }
        let template_id = request.template_id.as_deref()?;
        if let Some(text) = self.by_fixture.get(&fixture_key(template_id, &request.bindings)) {
            return Some(text.clone());
        }
        self.responders.get(template_id)?.iter().find_map(|r| r(request))
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.lookup(request).ok_or_else(|| {
            BackendError::Unavailable(format!("no scripted response for request {}", &request.digest()[..12]))
        })
    }
}

/// Signed feature hashing over word unigrams and bigrams.
///
/// Text is split on Unicode word boundaries and lowercased. Each unigram and
/// each space-joined bigram `f` is hashed with 64-bit FNV-1a over
/// `seed.to_le_bytes() ++ f`; the bucket is that hash modulo `dim`. The sign
/// is `+1` when the top bit of FNV-1a over `(seed ^ SIGN_SALT).to_le_bytes() ++ f`
/// is clear and `-1` otherwise. Rows are returned raw; the gateway applies
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

pub const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

fn fnv1a(seed: u64, feature: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(feature.as_bytes());
    h.finish()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

impl HashingEmbedder {
    pub fn features(text: &str) -> Vec<String> {
        let words = tokenize(text);
        let bigrams = words.windows(2).map(|w| format!("{} {}", w[0], w[1]));
        words.iter().cloned().chain(bigrams).collect()
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.dim];
        for feature in Self::features(text) {
            let bucket = (fnv1a(self.seed, &feature) % self.dim as u64) as usize;
            let sign = if fnv1a(self.seed ^ SIGN_SALT, &feature) >> 63 == 0 { 1.0 } else { -1.0 };
            row[bucket] += sign;
        }
        row
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_lookup_order() {
        let bindings: BTreeMap<String, String> = [("k".to_string(), "v".to_string())].into();
        let mut request = CompletionRequest::new(SCRIPTED_BACKEND_ID, "sys", "user");
        request.template_id = Some("t.v1".into());
        request.bindings = bindings.clone();

        let backend = ScriptedBackend::new()
            .with_fixture(fixture_key("t.v1", &bindings), "fixture text")
            .with_responder("t.v1", |_| Some("rule text".into()));
        assert_eq!(backend.complete(&request).unwrap(), "fixture text");

        let mut exact = backend.clone();
        exact.insert_digest(request.digest(), "exact text");
        assert_eq!(exact.complete(&request).unwrap(), "exact text");

        let mut other = request.clone();
        other.bindings.insert("k".into(), "w".into());
        assert_eq!(backend.complete(&other).unwrap(), "rule text");

        other.template_id = Some("u.v1".into());
        assert!(matches!(backend.complete(&other), Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn identical_requests_identical_answers() {
        let backend = ScriptedBackend::new().with_responder("t", |r| Some(format!("echo {}", r.user_prompt)));
        let mut request = CompletionRequest::new(SCRIPTED_BACKEND_ID, "sys", "user");
        request.template_id = Some("t".into());
        assert_eq!(backend.complete(&request).unwrap(), backend.complete(&request).unwrap());
        assert_eq!(request.digest(), request.clone().digest());
    }

    #[test]
    fn features_are_unigrams_then_bigrams() {
        assert_eq!(
            HashingEmbedder::features("Ride to WORK!"),
            vec!["ride", "to", "work", "ride to", "to work"]
        );
        assert!(HashingEmbedder::features("  ").is_empty());
    }
}
