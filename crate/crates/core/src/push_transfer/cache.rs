//! Content-addressed store of agent code keyed by [`Cid`].
//!
//! With a persistence directory every entry lives in `<dir>/<cid>` as raw code
//! bytes and the in-memory LRU only tracks recency; lookups re-read and re-hash
//! the file so tampering on disk surfaces as [`CacheError::CorruptEntry`].

use std::fs;
use std::io;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lru::LruCache;
use thiserror::Error;
use tracing::warn;

use crate::cid::{compute_cid, Cid};

pub const DEFAULT_CACHE_CAPACITY: usize = 128;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("code does not hash to {0}")]
    CidMismatch(Cid),
    #[error("cached entry {0} is corrupt and was evicted")]
    CorruptEntry(Cid),
    #[error("cache i/o: {0}")]
    Io(#[from] io::Error),
}

pub struct CodeCache {
    // `None` values mean the bytes live on disk
    entries: Mutex<LruCache<Cid, Option<Vec<u8>>>>,
    dir: Option<PathBuf>,
}

impl CodeCache {
    pub fn in_memory(capacity: usize) -> Self {
        Self {
            entries: Mutex::new(LruCache::new(non_zero(capacity))),
            dir: None,
        }
    }

    /// Opens (creating if needed) a persistent cache, reloading and verifying
    /// every entry already in `dir`. Corrupt files are deleted.
    pub fn persistent(dir: impl Into<PathBuf>, capacity: usize) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut found = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let Some(cid) = entry.file_name().to_str().and_then(|n| n.parse::<Cid>().ok()) else {
                continue;
            };
            let code = fs::read(entry.path())?;
            if !cid.matches(&code) {
                warn!(%cid, "dropping corrupt code cache entry");
                fs::remove_file(entry.path())?;
                continue;
            }
            let modified = entry.metadata()?.modified()?;
            found.push((modified, cid));
        }
        found.sort();
        let mut lru = LruCache::new(non_zero(capacity));
        for (_, cid) in found {
            if let Some((old, _)) = lru.push(cid, None) {
                remove_quietly(&dir.join(old.as_str()));
            }
        }
        Ok(Self {
            entries: Mutex::new(lru),
            dir: Some(dir),
        })
    }

    pub fn persistence_path(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn capacity(&self) -> usize {
        self.entries.lock().unwrap().cap().get()
    }

    /// Stores `code` under `cid`. Storing an existing cid only refreshes its recency.
    pub fn store(&self, cid: &Cid, code: &[u8]) -> Result<(), CacheError> {
        if compute_cid(code) != *cid {
            return Err(CacheError::CidMismatch(cid.clone()));
        }
        let mut entries = self.entries.lock().unwrap();
        if entries.get(cid).is_some() {
            return Ok(());
        }
        let value = match &self.dir {
            Some(dir) => {
                let tmp = dir.join(format!(".tmp-{cid}"));
                fs::write(&tmp, code)?;
                fs::rename(&tmp, dir.join(cid.as_str()))?;
                None
            }
            None => Some(code.to_vec()),
        };
        if let Some((evicted, _)) = entries.push(cid.clone(), value) {
            if let Some(dir) = &self.dir {
                if evicted != *cid {
                    remove_quietly(&dir.join(evicted.as_str()));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, cid: &Cid) -> Result<Option<Vec<u8>>, CacheError> {
        let mut entries = self.entries.lock().unwrap();
        let Some(slot) = entries.get(cid) else {
            return Ok(None);
        };
        if let Some(code) = slot {
            return Ok(Some(code.clone()));
        }
        let dir = self.dir.as_ref().expect("disk-backed entries imply a directory");
        let path = dir.join(cid.as_str());
        match fs::read(&path) {
            Ok(code) if cid.matches(&code) => Ok(Some(code)),
            Ok(_) => {
                entries.pop(cid);
                remove_quietly(&path);
                Err(CacheError::CorruptEntry(cid.clone()))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                entries.pop(cid);
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.entries.lock().unwrap().contains(cid)
    }

    /// Cached identifiers, most recently used first.
    pub fn list(&self) -> Vec<Cid> {
        self.entries.lock().unwrap().iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn non_zero(capacity: usize) -> NonZeroUsize {
    NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN)
}

fn remove_quietly(path: &Path) {
    if let Err(e) = fs::remove_file(path) {
        if e.kind() != io::ErrorKind::NotFound {
            warn!(path = %path.display(), error = %e, "failed to remove cache file");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(n: u8) -> (Cid, Vec<u8>) {
        let code = vec![n; 16];
        (compute_cid(&code), code)
    }

    #[test]
    fn never_stored_is_absent() {
        let cache = CodeCache::in_memory(4);
        assert!(cache.lookup(&entry(1).0).unwrap().is_none());
    }

    #[test]
    fn store_then_lookup_returns_identical_bytes() {
        let cache = CodeCache::in_memory(4);
        let (cid, code) = entry(1);
        cache.store(&cid, &code).unwrap();
        assert_eq!(cache.lookup(&cid).unwrap(), Some(code));
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let cache = CodeCache::in_memory(4);
        let (cid, _) = entry(1);
        assert!(matches!(cache.store(&cid, b"other"), Err(CacheError::CidMismatch(_))));
        assert!(cache.is_empty());
    }

    #[test]
    fn least_recently_used_is_evicted() {
        let cache = CodeCache::in_memory(2);
        let (a, b, c) = (entry(1), entry(2), entry(3));
        cache.store(&a.0, &a.1).unwrap();
        cache.store(&b.0, &b.1).unwrap();
        cache.store(&c.0, &c.1).unwrap();
        assert!(!cache.contains(&a.0));
        assert!(cache.contains(&b.0) && cache.contains(&c.0));

        // touching b makes c the eviction victim
        cache.lookup(&b.0).unwrap();
        let d = entry(4);
        cache.store(&d.0, &d.1).unwrap();
        assert!(!cache.contains(&c.0));
        assert_eq!(cache.list(), vec![d.0, b.0]);
    }

    #[test]
    fn storing_twice_is_a_no_op() {
        let cache = CodeCache::in_memory(2);
        let a = entry(1);
        cache.store(&a.0, &a.1).unwrap();
        cache.store(&a.0, &a.1).unwrap();
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn persisted_entries_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let a = entry(1);
        {
            let cache = CodeCache::persistent(dir.path(), 8).unwrap();
            cache.store(&a.0, &a.1).unwrap();
        }
        assert_eq!(fs::read(dir.path().join(a.0.as_str())).unwrap(), a.1);
        let reopened = CodeCache::persistent(dir.path(), 8).unwrap();
        assert_eq!(reopened.lookup(&a.0).unwrap(), Some(a.1));
    }

    #[test]
    fn tampered_file_is_reported_then_absent() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CodeCache::persistent(dir.path(), 8).unwrap();
        let a = entry(1);
        cache.store(&a.0, &a.1).unwrap();
        fs::write(dir.path().join(a.0.as_str()), b"tampered").unwrap();
        assert!(matches!(cache.lookup(&a.0), Err(CacheError::CorruptEntry(_))));
        assert!(cache.lookup(&a.0).unwrap().is_none());
        assert!(!dir.path().join(a.0.as_str()).exists());
    }

    #[test]
    fn corrupt_files_are_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let a = entry(1);
        fs::write(dir.path().join(a.0.as_str()), b"not the code").unwrap();
        let cache = CodeCache::persistent(dir.path(), 8).unwrap();
        assert!(cache.is_empty());
    }

    #[test]
    fn eviction_deletes_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CodeCache::persistent(dir.path(), 1).unwrap();
        let (a, b) = (entry(1), entry(2));
        cache.store(&a.0, &a.1).unwrap();
        cache.store(&b.0, &b.1).unwrap();
        assert!(!dir.path().join(a.0.as_str()).exists());
        assert!(dir.path().join(b.0.as_str()).exists());
    }
}
