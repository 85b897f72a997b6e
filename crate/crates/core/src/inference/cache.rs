//! Content-addressed reply cache on disk.
//!
//! Entries live at `root/ab/cd/abcd….json`, keyed by the SHA-256 of the
//! request fields that determine a reply. Writes go through a temporary file
//! and a rename, so readers never see partial entries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::{sha256_hex, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub reply: String,
}

/// Hash of everything that determines a reply.
pub fn cache_key(prompt: &str, model_name: &str, temperature: f64, max_output_tokens: u32) -> String {
    let canonical = serde_json::to_string(&(prompt, model_name, temperature, max_output_tokens))
        .expect("key fields serialize");
    sha256_hex(canonical.as_bytes())
}

impl CacheEntry {
    pub fn new(prompt: &str, model_name: &str, temperature: f64, max_output_tokens: u32, reply: String) -> Self {
        Self {
            key: cache_key(prompt, model_name, temperature, max_output_tokens),
            prompt: prompt.to_string(),
            model_name: model_name.to_string(),
            temperature,
            max_output_tokens,
            reply,
        }
    }

    /// Whether the stored fields still hash to the stored key.
    pub fn is_intact(&self) -> bool {
        cache_key(&self.prompt, &self.model_name, self.temperature, self.max_output_tokens) == self.key
    }
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        let (a, b) = (key.get(0..2).unwrap_or("00"), key.get(2..4).unwrap_or("00"));
        self.root.join(a).join(b).join(format!("{key}.json"))
    }

    /// Returns the entry for `key` when present and intact; corrupt entries read as misses.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.path_for(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == key && entry.is_intact()).then_some(entry)
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(&entry.key);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let bytes = serde_json::to_vec_pretty(entry).expect("cache entries serialize");
        write_atomic(&path, &bytes)
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        fn walk(dir: &Path) -> usize {
            std::fs::read_dir(dir)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| {
                    let path = e.path();
                    if path.is_dir() {
                        walk(&path)
                    } else {
                        usize::from(path.extension().is_some_and(|x| x == "json"))
                    }
                })
                .sum()
        }
        walk(&self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
