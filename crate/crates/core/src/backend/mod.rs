//! Uniform conditional-log-probability interface.
//!
//! Three bindings implement it: an HTTP client speaking the logprob wire
//! protocol, a deterministic additive-smoothing n-gram model, and a replay
//! binding that only serves cached scores. All scores flow through a keyed
//! cache, so a completed run can be replayed without upstream calls.

mod cache;
mod http;
mod ngram;

pub use cache::{CacheEntry, ScoreCache};
pub use http::HttpBackend;
pub use ngram::{subsample_corpus_lines, NGramBackend, NGramModel};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identifies the continuation-scoring convention baked into cache keys.
/// Requests carry the canonical answer string; each backend decides the
/// concrete variant it scores and reports it back.
pub const SCORED_VARIANT_POLICY: &str = "canonical-v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model_id: String,
    pub prefix: String,
    pub continuation: String,
    pub chat_wrap: bool,
}

impl ScoreRequest {
    pub fn new(
        model_id: impl Into<String>,
        prefix: impl Into<String>,
        continuation: impl Into<String>,
        chat_wrap: bool,
    ) -> Self {
        ScoreRequest {
            model_id: model_id.into(),
            prefix: prefix.into(),
            continuation: continuation.into(),
            chat_wrap,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.continuation.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "continuation must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Stable cache key over (model, prefix, continuation, chat_wrap,
    /// variant policy). Fields are length-prefixed before hashing so no
    /// two distinct requests can collide by concatenation.
    pub fn cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [
            SCORED_VARIANT_POLICY,
            &self.model_id,
            &self.prefix,
            &self.continuation,
            if self.chat_wrap { "1" } else { "0" },
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// Natural-log probability of the continuation given the prefix.
    pub logprob: f64,
    /// Exact continuation string the backend scored.
    pub scored_variant: String,
    pub token_count: u32,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("no backend bound for model `{0}`")]
    UnknownModel(String),

    #[error("network error talking to `{endpoint}`: {message}")]
    Network { endpoint: String, message: String },

    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("replay miss for cache key {key}")]
    ReplayMiss { key: String },

    #[error("invalid score request: {0}")]
    InvalidRequest(String),

    #[error("cache i/o error: {0}")]
    CacheIo(String),
}

impl BackendError {
    /// Network-level failures are worth retrying; everything else is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Network { .. })
    }
}

/// A scoring engine for one or more models.
pub trait ScoreBackend: Send + Sync {
    fn conditional_logprob(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError>;
}

/// Replay binding: serves only what the cache already holds. The cache
/// lookup happens in [`BackendSet`]; reaching the binding itself means the
/// key was absent.
pub struct ReplayBackend;

impl ScoreBackend for ReplayBackend {
    fn conditional_logprob(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        Err(BackendError::ReplayMiss {
            key: req.cache_key(),
        })
    }
}

/// Model-id to backend bindings plus the shared score cache.
pub struct BackendSet {
    bindings: BTreeMap<String, Box<dyn ScoreBackend>>,
    cache: ScoreCache,
    upstream_calls: AtomicUsize,
}

impl BackendSet {
    pub fn new(cache: ScoreCache) -> Self {
        BackendSet {
            bindings: BTreeMap::new(),
            cache,
            upstream_calls: AtomicUsize::new(0),
        }
    }

    pub fn bind(&mut self, model_id: impl Into<String>, backend: Box<dyn ScoreBackend>) {
        self.bindings.insert(model_id.into(), backend);
    }

    pub fn has_binding(&self, model_id: &str) -> bool {
        self.bindings.contains_key(model_id)
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    /// Upstream (non-cache) calls made so far.
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    /// Scores one request, consulting the cache first.
    pub fn conditional_logprob(
        &self,
        req: &ScoreRequest,
    ) -> Result<ScoreResponse, BackendError> {
        req.validate()?;
        let key = req.cache_key();
        if let Some(entry) = self.cache.get(&key) {
            return Ok(entry.response());
        }
        let backend = self
            .bindings
            .get(&req.model_id)
            .ok_or_else(|| BackendError::UnknownModel(req.model_id.clone()))?;
        let response = backend.conditional_logprob(req)?;
        self.upstream_calls.fetch_add(1, Ordering::Relaxed);
        self.cache.put(&key, req, &response);
        Ok(response)
    }

    /// Scores a batch with bounded parallelism. Responses are positionally
    /// aligned with the requests; identical requests are deduplicated into
    /// one upstream call; per-request errors are collected, not fatal.
    /// Successful scores are persisted to the cache file before returning.
    pub fn batch_score(
        &self,
        requests: &[ScoreRequest],
        parallelism: usize,
    ) -> Vec<Result<ScoreResponse, BackendError>> {
        let parallelism = parallelism.max(1);
        let mut slot_of_key: BTreeMap<String, usize> = BTreeMap::new();
        let mut unique: Vec<&ScoreRequest> = Vec::new();
        let mut request_slot = Vec::with_capacity(requests.len());
        for req in requests {
            let key = req.cache_key();
            let slot = *slot_of_key.entry(key).or_insert_with(|| {
                unique.push(req);
                unique.len() - 1
            });
            request_slot.push(slot);
        }

        let slot_results: Mutex<Vec<Option<Result<ScoreResponse, BackendError>>>> =
            Mutex::new(vec![None; unique.len()]);
        let next = AtomicUsize::new(0);
        let workers = parallelism.min(unique.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= unique.len() {
                        break;
                    }
                    let result = self.conditional_logprob(unique[i]);
                    slot_results.lock().expect("worker poisoned lock")[i] = Some(result);
                });
            }
        });

        if let Err(e) = self.cache.flush() {
            // Persisting failed: report it on every otherwise-successful slot
            // rather than pretending the scores are durable.
            let mut slots = slot_results.lock().expect("poisoned lock");
            for slot in slots.iter_mut() {
                if matches!(slot, Some(Ok(_))) {
                    *slot = Some(Err(e.clone()));
                }
            }
        }

        let slots = slot_results.into_inner().expect("poisoned lock");
        request_slot
            .into_iter()
            .map(|slot| slots[slot].clone().expect("every slot scored"))
            .collect()
    }

    /// Persists any unwritten cache entries.
    pub fn flush_cache(&self) -> Result<(), BackendError> {
        self.cache.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test backend scoring from a closure, with a call counter.
    pub(crate) struct FnBackend<F>(pub F);

    impl<F> ScoreBackend for FnBackend<F>
    where
        F: Fn(&ScoreRequest) -> Result<ScoreResponse, BackendError> + Send + Sync,
    {
        fn conditional_logprob(
            &self,
            req: &ScoreRequest,
        ) -> Result<ScoreResponse, BackendError> {
            (self.0)(req)
        }
    }

    fn ok_response(lp: f64) -> ScoreResponse {
        ScoreResponse {
            logprob: lp,
            scored_variant: "x".into(),
            token_count: 1,
        }
    }

    #[test]
    fn cache_keys_do_not_collide_on_field_boundaries() {
        let a = ScoreRequest::new("m", "ab", "c", false);
        let b = ScoreRequest::new("m", "a", "bc", false);
        assert_ne!(a.cache_key(), b.cache_key());
        let c = ScoreRequest::new("m", "a", "bc", true);
        assert_ne!(b.cache_key(), c.cache_key());
    }

    #[test]
    fn batch_dedups_identical_requests() {
        let mut set = BackendSet::new(ScoreCache::in_memory());
        set.bind(
            "m",
            Box::new(FnBackend(|_req: &ScoreRequest| Ok(ok_response(-1.0)))),
        );
        let req = ScoreRequest::new("m", "p", "c", false);
        let out = set.batch_score(&[req.clone(), req.clone()], 4);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].as_ref().unwrap(), out[1].as_ref().unwrap());
        assert_eq!(set.upstream_calls(), 1);
    }

    #[test]
    fn batch_isolates_failures() {
        let mut set = BackendSet::new(ScoreCache::in_memory());
        set.bind(
            "good",
            Box::new(FnBackend(|_req: &ScoreRequest| Ok(ok_response(-2.0)))),
        );
        let reqs = vec![
            ScoreRequest::new("good", "p", "c", false),
            ScoreRequest::new("missing", "p", "c", false),
        ];
        let out = set.batch_score(&reqs, 2);
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(BackendError::UnknownModel(_))));
    }

    #[test]
    fn replay_on_empty_cache_misses() {
        let mut set = BackendSet::new(ScoreCache::in_memory());
        set.bind("m", Box::new(ReplayBackend));
        let req = ScoreRequest::new("m", "p", "c", false);
        match set.conditional_logprob(&req) {
            Err(BackendError::ReplayMiss { key }) => assert_eq!(key, req.cache_key()),
            other => panic!("expected replay miss, got {other:?}"),
        }
    }

    #[test]
    fn warm_cache_serves_replay_without_upstream_calls() {
        let cache = ScoreCache::in_memory();
        let req = ScoreRequest::new("m", "p", "c", false);
        cache.put(&req.cache_key(), &req, &ok_response(-3.0));
        let mut set = BackendSet::new(cache);
        set.bind("m", Box::new(ReplayBackend));
        let resp = set.conditional_logprob(&req).unwrap();
        assert_eq!(resp.logprob, -3.0);
        assert_eq!(set.upstream_calls(), 0);
    }

    #[test]
    fn empty_continuation_rejected() {
        let set = BackendSet::new(ScoreCache::in_memory());
        let req = ScoreRequest::new("m", "p", "  ", false);
        assert!(matches!(
            set.conditional_logprob(&req),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
