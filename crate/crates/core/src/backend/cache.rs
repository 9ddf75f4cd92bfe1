//! Keyed score cache, persisted as JSONL.
//!
//! Puts are idempotent: the first entry for a key wins, so concurrent
//! writers scoring the same request cannot disagree. `flush` appends only
//! entries not yet on disk.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub prefix: String,
    pub continuation: String,
    pub chat_wrap: bool,
    pub logprob: f64,
    pub scored_variant: String,
    pub token_count: u32,
    pub timestamp: String,
}

impl CacheEntry {
    pub fn response(&self) -> ScoreResponse {
        ScoreResponse {
            logprob: self.logprob,
            scored_variant: self.scored_variant.clone(),
            token_count: self.token_count,
        }
    }
}

struct CacheState {
    entries: BTreeMap<String, CacheEntry>,
    unflushed: Vec<String>,
}

pub struct ScoreCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
}

impl ScoreCache {
    /// Cache that never touches disk. Used for tests and one-shot scoring.
    pub fn in_memory() -> Self {
        ScoreCache {
            path: None,
            state: Mutex::new(CacheState {
                entries: BTreeMap::new(),
                unflushed: Vec::new(),
            }),
        }
    }

    /// Opens (or creates) `<dir>/scores.jsonl`.
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| BackendError::CacheIo(format!("create {}: {e}", dir.display())))?;
        let path = dir.join("scores.jsonl");
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| BackendError::CacheIo(format!("read {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line).map_err(|e| {
                    BackendError::CacheIo(format!(
                        "bad cache line {} in {}: {e}",
                        lineno + 1,
                        path.display()
                    ))
                })?;
                entries.insert(entry.key.clone(), entry);
            }
        }
        Ok(ScoreCache {
            path: Some(path),
            state: Mutex::new(CacheState {
                entries,
                unflushed: Vec::new(),
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.state
            .lock()
            .expect("cache lock")
            .entries
            .get(key)
            .cloned()
    }

    /// Idempotent keyed put: a second put for the same key is a no-op.
    pub fn put(&self, key: &str, req: &ScoreRequest, resp: &ScoreResponse) {
        let mut state = self.state.lock().expect("cache lock");
        if state.entries.contains_key(key) {
            return;
        }
        state.entries.insert(
            key.to_string(),
            CacheEntry {
                key: key.to_string(),
                model: req.model_id.clone(),
                prefix: req.prefix.clone(),
                continuation: req.continuation.clone(),
                chat_wrap: req.chat_wrap,
                logprob: resp.logprob,
                scored_variant: resp.scored_variant.clone(),
                token_count: resp.token_count,
                timestamp: chrono::Utc::now().to_rfc3339(),
            },
        );
        state.unflushed.push(key.to_string());
    }

    /// Appends unwritten entries to the cache file, sorted by key.
    pub fn flush(&self) -> Result<(), BackendError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut state = self.state.lock().expect("cache lock");
        if state.unflushed.is_empty() {
            return Ok(());
        }
        let mut keys = std::mem::take(&mut state.unflushed);
        keys.sort_unstable();
        keys.dedup();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::CacheIo(format!("open {}: {e}", path.display())))?;
        for key in &keys {
            let entry = state.entries.get(key).expect("unflushed key present");
            let line = serde_json::to_string(entry).expect("entry serializes");
            writeln!(file, "{line}")
                .map_err(|e| BackendError::CacheIo(format!("write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ScoreRequest {
        ScoreRequest::new("m", "p", "c", false)
    }

    fn response() -> ScoreResponse {
        ScoreResponse {
            logprob: -1.5,
            scored_variant: "c".into(),
            token_count: 1,
        }
    }

    #[test]
    fn put_is_idempotent() {
        let cache = ScoreCache::in_memory();
        let req = request();
        cache.put("k", &req, &response());
        let mut second = response();
        second.logprob = -9.0;
        cache.put("k", &req, &second);
        assert_eq!(cache.get("k").unwrap().logprob, -1.5);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn flush_and_reopen_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::open(dir.path()).unwrap();
        let req = request();
        cache.put(&req.cache_key(), &req, &response());
        cache.flush().unwrap();

        let reopened = ScoreCache::open(dir.path()).unwrap();
        let entry = reopened.get(&req.cache_key()).unwrap();
        assert_eq!(entry.logprob, -1.5);
        assert_eq!(entry.model, "m");
    }

    #[test]
    fn flush_appends_only_new_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::open(dir.path()).unwrap();
        let a = ScoreRequest::new("m", "p", "a", false);
        cache.put(&a.cache_key(), &a, &response());
        cache.flush().unwrap();
        let b = ScoreRequest::new("m", "p", "b", false);
        cache.put(&b.cache_key(), &b, &response());
        cache.flush().unwrap();

        let text = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
