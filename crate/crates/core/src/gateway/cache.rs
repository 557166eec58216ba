use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::GenerationParams;
use crate::prompting::{Message, PromptBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<Message>,
}

/// One cached completion, stored as `<dir>/<fp[0..2]>/<fp>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CachedRequest,
    pub response: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(bundle: &PromptBundle, params: &GenerationParams, response: &str) -> Self {
        CacheEntry {
            request: CachedRequest {
                model: params.model.clone(),
                temperature: params.temperature,
                max_tokens: params.max_tokens,
                messages: bundle.messages.clone(),
            },
            response: response.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Content-addressed response store. Writes go to a temporary file in the
/// target directory and are renamed into place, so readers never observe a
/// partial entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        let shard = fingerprint.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{fingerprint}.json"))
    }

    /// A readable entry for `fingerprint`. Corrupt files count as misses.
    pub fn get(&self, fingerprint: &str) -> Option<CacheEntry> {
        let path = self.path_for(fingerprint);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        self.get(fingerprint).is_some()
    }

    pub fn put(&self, fingerprint: &str, entry: &CacheEntry) -> io::Result<()> {
        let path = self.path_for(fingerprint);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{fingerprint}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_vec_pretty(entry).map_err(io::Error::other)?;
        let written = (|| {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&body)?;
            file.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if written.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        written
    }

    /// Number of entries on disk.
    pub fn len(&self) -> usize {
        let Ok(shards) = fs::read_dir(&self.root) else {
            return 0;
        };
        shards
            .flatten()
            .filter_map(|s| fs::read_dir(s.path()).ok())
            .flat_map(|files| files.flatten())
            .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::tests::bundle;
    use crate::gateway::fingerprint;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let params = GenerationParams::new("m", "");
        let b = bundle("hello");
        let fp = fingerprint(&b, &params);
        assert!(cache.get(&fp).is_none());
        let entry = CacheEntry::new(&b, &params, "Color: red");
        cache.put(&fp, &entry).unwrap();
        let path = dir.path().join(&fp[..2]).join(format!("{fp}.json"));
        assert!(path.is_file());
        assert_eq!(cache.get(&fp).unwrap(), entry);
        assert_eq!(cache.len(), 1);
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .flatten()
            .filter(|e| e.path().extension().is_some_and(|x| x == "tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn corrupt_entry_is_a_miss_and_is_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let fp = "ab".repeat(32);
        let path = cache.path_for(&fp);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{\"request\": tru").unwrap();
        assert!(cache.get(&fp).is_none());
        let entry = CacheEntry::new(&bundle("x"), &GenerationParams::new("m", ""), "ok");
        cache.put(&fp, &entry).unwrap();
        assert_eq!(cache.get(&fp).unwrap().response, "ok");
    }

    #[test]
    fn concurrent_writers_leave_a_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let fp = "cd".repeat(32);
        std::thread::scope(|s| {
            for i in 0..8 {
                let cache = &cache;
                let fp = &fp;
                s.spawn(move || {
                    let entry = CacheEntry::new(&bundle("x"), &GenerationParams::new("m", ""), &format!("r{i}"));
                    cache.put(fp, &entry).unwrap();
                });
            }
        });
        assert!(cache.get(&fp).unwrap().response.starts_with('r'));
        assert_eq!(cache.len(), 1);
    }
}
