//! Verdict backends behind a caching, concurrency-bounded classifier.
//!
//! A [`Classifier`] answers `classify(prompt)` from its cache when possible and
//! otherwise asks the configured backend:
//!
//! - `http`: an OpenAI-style chat-completions endpoint
//! - `synthetic`: a first-match substring rule table (deterministic)
//! - `replay`: cache only; a miss is an error
//!
//! Live answers are appended to the cache file before they are returned, so an
//! interrupted run can be resumed without repeating requests.

mod cache;
mod http;
mod synthetic;
mod verdict;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, compact, prompt_digest, scan, CacheEntry, CacheIssue, CacheScan, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use synthetic::{RuleScope, RuleTable, SyntheticConfig, SyntheticRule};
pub use verdict::{parse_verdict, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no 0/1 verdict in model output {raw:?}")]
    Unparseable { raw: String },
    #[error("replay cache has no entry for key {key}")]
    ReplayMiss { key: String },
    #[error("backend config: {0}")]
    Config(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ClientError {
    pub(crate) fn cache(path: &Path, source: std::io::Error) -> Self {
        ClientError::Cache {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable error code.
    pub fn kind(&self) -> &'static str {
        match self {
            ClientError::Transport { .. } => "transport",
            ClientError::Status { .. } => "http_status",
            ClientError::Protocol(_) => "protocol",
            ClientError::Unparseable { .. } => "unparseable",
            ClientError::ReplayMiss { .. } => "replay_miss",
            ClientError::Config(_) => "config",
            ClientError::Cache { .. } => "cache",
        }
    }

    /// Errors that concern one prompt only; the run can continue without it.
    pub fn is_record_level(&self) -> bool {
        matches!(self, ClientError::Unparseable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Synthetic,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Logical model id; part of every cache key. A replay backend must use
    /// the id the cache was recorded under.
    pub id: String,
    pub kind: BackendKind,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

fn default_in_flight() -> usize {
    4
}

fn default_retries() -> u32 {
    3
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, ClientError> {
        let config: BackendConfig = toml::from_str(text).map_err(|e| ClientError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn synthetic(id: &str, rules: Vec<SyntheticRule>) -> Self {
        Self {
            id: id.to_string(),
            kind: BackendKind::Synthetic,
            max_in_flight: default_in_flight(),
            retries: 0,
            http: None,
            synthetic: Some(SyntheticConfig { seed: 0, rules }),
        }
    }

    pub fn replay(id: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: BackendKind::Replay,
            max_in_flight: default_in_flight(),
            retries: 0,
            http: None,
            synthetic: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.id.trim().is_empty() {
            return Err(ClientError::Config("backend id is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        match self.kind {
            BackendKind::Http if self.http.is_none() => {
                Err(ClientError::Config("http backend needs an [http] section".into()))
            }
            BackendKind::Synthetic => match &self.synthetic {
                Some(s) => RuleTable::new(s).map(|_| ()),
                None => Err(ClientError::Config(
                    "synthetic backend needs a [synthetic] section".into(),
                )),
            },
            _ => Ok(()),
        }
    }
}

enum Backend {
    Http(HttpBackend),
    Synthetic(RuleTable),
    Replay,
}

/// Counting semaphore bounding in-flight backend calls.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    /// Requests that reached the backend (network calls for `http`).
    pub backend_calls: u64,
    pub cache_hits: u64,
}

type Slot = Arc<Mutex<()>>;

/// Thread-safe verdict source. See the module docs.
pub struct Classifier {
    backend_id: String,
    backend: Backend,
    cache: Mutex<ResponseCache>,
    slots: Mutex<HashMap<String, Slot>>,
    permits: Permits,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Classifier {
    /// Builds a classifier; `cache_path` of `None` keeps the cache in memory.
    pub fn new(config: &BackendConfig, cache_path: Option<&Path>) -> Result<Self, ClientError> {
        config.validate()?;
        let backend = match config.kind {
            BackendKind::Http => Backend::Http(HttpBackend::new(
                config.http.clone().expect("validated"),
                config.retries,
            )?),
            BackendKind::Synthetic => {
                Backend::Synthetic(RuleTable::new(config.synthetic.as_ref().expect("validated"))?)
            }
            BackendKind::Replay => Backend::Replay,
        };
        let cache = match cache_path {
            Some(path) => ResponseCache::open(path)?,
            None if config.kind == BackendKind::Replay => {
                return Err(ClientError::Config("replay backend needs a cache file".into()))
            }
            None => ResponseCache::in_memory(),
        };
        if config.kind == BackendKind::Replay && cache.is_empty() {
            log::warn!("replay cache is empty; every lookup will miss");
        }
        Ok(Self {
            backend_id: config.id.clone(),
            backend,
            cache: Mutex::new(cache),
            slots: Mutex::new(HashMap::new()),
            permits: Permits::new(config.max_in_flight),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    fn cached(&self, key: &str) -> Option<Result<Verdict, ClientError>> {
        let cache = self.cache.lock().unwrap();
        cache.get(key).map(|entry| {
            entry
                .verdict
                .ok_or_else(|| ClientError::Unparseable { raw: entry.raw.clone() })
        })
    }

    /// Returns the verdict for `prompt`, issuing at most one backend request
    /// per distinct prompt over the classifier's lifetime.
    pub fn classify(&self, prompt: &str) -> Result<Verdict, ClientError> {
        let key = cache_key(&self.backend_id, prompt);
        if let Some(hit) = self.cached(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return hit;
        }
        let slot = self.slots.lock().unwrap().entry(key.clone()).or_default().clone();
        let _exclusive = slot.lock().unwrap();
        // Another caller may have filled the entry while we waited.
        if let Some(hit) = self.cached(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return hit;
        }
        let raw = {
            let _permit = self.permits.acquire();
            match &self.backend {
                Backend::Replay => return Err(ClientError::ReplayMiss { key }),
                Backend::Synthetic(rules) => {
                    self.backend_calls.fetch_add(1, Ordering::SeqCst);
                    rules.respond(prompt)
                }
                Backend::Http(http) => {
                    self.backend_calls.fetch_add(1, Ordering::SeqCst);
                    http.complete(prompt)?
                }
            }
        };
        let entry = CacheEntry::new(&self.backend_id, prompt, raw);
        let verdict = entry.verdict;
        let raw_copy = entry.raw.clone();
        self.cache.lock().unwrap().insert(entry)?;
        verdict.ok_or(ClientError::Unparseable { raw: raw_copy })
    }
}

/// One-shot convenience: classify a single prompt with an in-memory cache.
pub fn classify(prompt: &str, backend: &BackendConfig) -> Result<Verdict, ClientError> {
    Classifier::new(backend, None)?.classify(prompt)
}
