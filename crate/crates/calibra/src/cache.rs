//! Append-only JSONL response cache.
//!
//! Entries are keyed by a SHA-256 digest of the canonical request (sorted
//! keys, serde_json number formatting) together with the backend name. A
//! torn final line left by a crash is dropped on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use calibra_core::backend::{Backend, BackendError, Completion, CompletionRequest};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    pub backend: String,
    pub request: CompletionRequest,
    pub completion: Completion,
    pub created_at: String,
}

/// Hex SHA-256 of the canonical serialization of `(backend, request)`.
pub fn request_hash(backend: &str, request: &CompletionRequest) -> String {
    // `serde_json::Value` objects are BTreeMap-backed, so keys come out sorted.
    let canonical = serde_json::json!({ "backend": backend, "request": request });
    let bytes = serde_json::to_vec(&canonical).expect("requests serialize");
    hex::encode(Sha256::digest(bytes))
}

pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, Completion>>,
    file: Mutex<File>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
            let mut offset = 0usize;
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            for (i, line) in lines.iter().enumerate() {
                offset += line.len();
                if line.trim().is_empty() {
                    valid_len = offset as u64;
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(entry) => {
                        entries.insert(entry.request_hash, entry.completion);
                        valid_len = offset as u64;
                    }
                    Err(e) if i + 1 == lines.len() => {
                        log::warn!("{}: dropping torn final line: {e}", path.display());
                    }
                    Err(e) => {
                        return Err(Error::Data(format!("{}:{}: {e}", path.display(), i + 1)));
                    }
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(Error::io(path))?;
        file.set_len(valid_len).map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<Completion> {
        self.entries.read().expect("cache lock").get(hash).cloned()
    }

    /// Appends one entry and flushes it before returning.
    pub fn put(&self, backend: &str, request: &CompletionRequest, completion: &Completion) -> Result<()> {
        let entry = CacheEntry {
            request_hash: request_hash(backend, request),
            backend: backend.to_string(),
            request: request.clone(),
            completion: completion.clone(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_string(&entry).expect("entries serialize");
        line.push('\n');
        {
            let mut file = self.file.lock().expect("cache file lock");
            file.write_all(line.as_bytes()).map_err(Error::io(&self.path))?;
            file.flush().map_err(Error::io(&self.path))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(entry.request_hash, entry.completion);
        Ok(())
    }
}

/// Serves repeated requests from a [`ResponseCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
    name: String,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        let name = inner.name();
        Self {
            inner,
            cache,
            name,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<Completion, BackendError> {
        let hash = request_hash(&self.name, request);
        if let Some(hit) = self.cache.get(&hash) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let completion = self.inner.complete(request)?;
        self.cache
            .put(&self.name, request, &completion)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        Ok(completion)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}
