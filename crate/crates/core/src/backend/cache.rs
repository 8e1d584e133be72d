//! Content-addressed completion cache.
//!
//! Wraps any [`Backend`]; each request is keyed by the SHA-256 of its
//! canonical JSON serialization (model id, prompt, decoding parameters, and
//! context tag all participate). Entries are single JSON files written
//! atomically (temp file + rename), so concurrent writers of the same key
//! settle on one valid entry. A corrupt entry is discarded, recomputed, and
//! logged.

use super::{Backend, BackendError, Completion, CompletionRequest, TokenStep};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

/// Cache decorator. `score_text` and determinism pass through to the inner
/// backend; only `complete` is cached.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Hit/miss counters for the current process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
}

/// On-disk totals, gathered by walking the cache directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheUsage {
    pub entries: u64,
    pub bytes: u64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Cache key: hex SHA-256 of the request's canonical JSON.
    pub fn key_for(request: &CompletionRequest) -> String {
        let canonical =
            serde_json::to_string(request).expect("requests always serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn read_entry(&self, path: &Path) -> Option<Completion> {
        let text = std::fs::read_to_string(path).ok()?;
        match serde_json::from_str(&text) {
            Ok(completion) => Some(completion),
            Err(e) => {
                log::warn!(
                    "discarding corrupt cache entry {}: {e}",
                    path.display()
                );
                let _ = std::fs::remove_file(path);
                None
            }
        }
    }

    fn write_entry(&self, path: &Path, completion: &Completion) -> Result<(), BackendError> {
        let parent = path.parent().expect("entry paths always have a parent");
        std::fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer(&mut tmp, completion)
            .map_err(|e| BackendError::Cache(std::io::Error::other(e)))?;
        tmp.persist(path)
            .map_err(|e| BackendError::Cache(e.error))?;
        Ok(())
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let key = Self::key_for(request);
        let path = self.entry_path(&key);
        if let Some(hit) = self.read_entry(&path) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let completion = self.inner.complete(request)?;
        self.write_entry(&path, &completion)?;
        Ok(completion)
    }

    fn score_text(&self, context: &str, continuation: &str) -> Result<Vec<TokenStep>, BackendError> {
        self.inner.score_text(context, continuation)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Walk a cache directory, totalling entries and bytes.
pub fn cache_usage(dir: &Path) -> Result<CacheUsage, BackendError> {
    let mut usage = CacheUsage::default();
    if !dir.exists() {
        return Ok(usage);
    }
    for shard in std::fs::read_dir(dir)? {
        let shard = shard?.path();
        if !shard.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&shard)? {
            let meta = entry?.metadata()?;
            if meta.is_file() {
                usage.entries += 1;
                usage.bytes += meta.len();
            }
        }
    }
    Ok(usage)
}

/// Delete every entry, leaving the directory itself in place.
pub fn clear_cache(dir: &Path) -> Result<u64, BackendError> {
    let mut removed = 0;
    if !dir.exists() {
        return Ok(0);
    }
    for shard in std::fs::read_dir(dir)? {
        let shard = shard?.path();
        if shard.is_dir() {
            for entry in std::fs::read_dir(&shard)? {
                let path = entry?.path();
                if path.is_file() {
                    std::fs::remove_file(&path)?;
                    removed += 1;
                }
            }
            let _ = std::fs::remove_dir(&shard);
        }
    }
    Ok(removed)
}
