//! Directory-backed key/value cache for generated descriptions and embeddings.
//!
//! One UTF-8 file per key, named by the SHA-256 hex digest of the key. Each
//! file holds `field: value` header lines, a blank line, then the body.
//! Writes go through a temp file and an atomic rename, so concurrent readers
//! never observe partial records.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub header: BTreeMap<String, String>,
    pub body: String,
}

impl CacheRecord {
    pub fn new(model_id: &str, source: &str, body: impl Into<String>) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut header = BTreeMap::new();
        header.insert("model_id".to_string(), model_id.to_string());
        header.insert("source".to_string(), source.to_string());
        header.insert("timestamp".to_string(), ts.to_string());
        Self {
            header,
            body: body.into(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.header.get(name).map(String::as_str)
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(&v.replace('\n', " "));
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    fn parse(text: &str) -> Option<Self> {
        let (head, body) = text.split_once("\n\n")?;
        let mut header = BTreeMap::new();
        for line in head.lines() {
            let (k, v) = line.split_once(": ")?;
            header.insert(k.to_string(), v.to_string());
        }
        Some(Self {
            header,
            body: body.to_string(),
        })
    }
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(sha256_hex(key.as_bytes()))
    }

    /// Returns `None` for missing or unreadable records.
    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        let text = std::fs::read_to_string(self.path_for(key)).ok()?;
        CacheRecord::parse(&text)
    }

    pub fn put(&self, key: &str, record: &CacheRecord) -> io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(key);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, record.render())?;
        std::fs::rename(tmp, path)
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_none())
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_record() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        assert!(cache.get("k").is_none());
        let mut rec = CacheRecord::new("m", "remote", "line one\n\nline three");
        rec.header.insert("feature_hash".into(), "abc".into());
        cache.put("k", &rec).unwrap();
        let back = cache.get("k").unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.field("source"), Some("remote"));
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.path_for("k").file_name().unwrap().len(), 64);
    }
}
