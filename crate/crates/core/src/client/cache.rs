//! Append-only response cache, one JSON record per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_verdict, ClientError, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt_digest: String,
    pub raw: String,
    /// `None` when the completion did not contain a usable verdict.
    pub verdict: Option<Verdict>,
    pub backend_id: String,
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(backend_id: &str, prompt: &str, raw: String) -> Self {
        let prompt_digest = prompt_digest(prompt);
        Self {
            key: cache_key_from_digest(backend_id, &prompt_digest),
            verdict: parse_verdict(&raw).ok(),
            prompt_digest,
            raw,
            backend_id: backend_id.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Checks the key derivation and the stored verdict against the raw text.
    pub fn check(&self) -> Result<(), String> {
        if self.key != cache_key_from_digest(&self.backend_id, &self.prompt_digest) {
            return Err("key does not match (backend_id, prompt_digest)".into());
        }
        if self.verdict != parse_verdict(&self.raw).ok() {
            return Err("stored verdict disagrees with the raw completion".into());
        }
        Ok(())
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn cache_key_from_digest(backend_id: &str, digest: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(digest.as_bytes());
    hex::encode(hasher.finalize())
}

/// Stable SHA-256 key for a (backend, prompt) pair.
pub fn cache_key(backend_id: &str, prompt: &str) -> String {
    cache_key_from_digest(backend_id, &prompt_digest(prompt))
}

/// A corrupt or rejected line found while reading a cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct CacheScan {
    pub entries: Vec<CacheEntry>,
    pub issues: Vec<CacheIssue>,
    pub duplicates: usize,
}

/// Reads every line; malformed lines become issues, later duplicates of an
/// existing key are counted and dropped.
pub fn scan(path: &Path) -> Result<CacheScan, ClientError> {
    let mut out = CacheScan::default();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(|e| ClientError::cache(path, e))?;
    let mut seen = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| ClientError::cache(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = match serde_json::from_str::<CacheEntry>(&line) {
            Ok(entry) => entry,
            Err(e) => {
                out.issues.push(CacheIssue {
                    line: line_no,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if let Err(reason) = entry.check() {
            out.issues.push(CacheIssue { line: line_no, reason });
            continue;
        }
        if seen.insert(entry.key.clone(), line_no).is_some() {
            out.duplicates += 1;
            continue;
        }
        out.entries.push(entry);
    }
    Ok(out)
}

/// In-memory index over the cache file plus the single append handle.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
    writer: Option<File>,
    skipped_lines: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: HashMap::new(),
            writer: None,
            skipped_lines: 0,
        }
    }

    /// Opens (creating if needed) a cache file. Corrupt lines are skipped with
    /// a warning.
    pub fn open(path: &Path) -> Result<Self, ClientError> {
        let scanned = scan(path)?;
        for issue in &scanned.issues {
            log::warn!(
                "{}: skipping corrupt cache line {}: {}",
                path.display(),
                issue.line,
                issue.reason
            );
        }
        let entries = scanned.entries.into_iter().map(|e| (e.key.clone(), e)).collect();
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
            writer: None,
            skipped_lines: scanned.issues.len(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    /// Appends and flushes before indexing, so a crash never leaves an entry
    /// visible in memory that is missing on disk.
    pub fn insert(&mut self, entry: CacheEntry) -> Result<(), ClientError> {
        if self.entries.contains_key(&entry.key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            if self.writer.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| ClientError::cache(path, e))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ClientError::cache(path, e))?;
                self.writer = Some(file);
            }
            let writer = self.writer.as_mut().expect("opened above");
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.flush())
                .map_err(|e| ClientError::cache(path, e))?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }
}

/// Rewrites the cache file keeping only valid, first-seen entries.
/// Returns (kept, dropped).
pub fn compact(path: &Path) -> Result<(usize, usize), ClientError> {
    let scanned = scan(path)?;
    let dropped = scanned.issues.len() + scanned.duplicates;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ClientError::cache(path, e))?;
    for entry in &scanned.entries {
        let line = serde_json::to_string(entry).expect("cache entry serializes");
        writeln!(tmp, "{line}").map_err(|e| ClientError::cache(path, e))?;
    }
    tmp.persist(path).map_err(|e| ClientError::cache(path, e.error))?;
    Ok((scanned.entries.len(), dropped))
}
