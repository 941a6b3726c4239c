use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

/// Content-addressed response store: `<dir>/<first two hex>/<digest>`.
///
/// Each entry is a one-line JSON header followed by the raw response text.
/// Writes go through a temporary file and a rename, so concurrent writers of
/// the same key leave one complete entry behind.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    format: u32,
    digest: String,
    model_id: String,
}

const FORMAT: u32 = 1;

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.dir.join(shard).join(digest)
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        let raw = fs::read_to_string(self.entry_path(digest)).ok()?;
        let (header, body) = raw.split_once('\n')?;
        let header: EntryHeader = serde_json::from_str(header).ok()?;
        (header.format == FORMAT && header.digest == digest).then(|| body.to_owned())
    }

    pub fn put(&self, digest: &str, model_id: &str, text: &str) -> std::io::Result<()> {
        let path = self.entry_path(digest);
        let parent = path.parent().expect("entry has a shard directory");
        fs::create_dir_all(parent)?;
        let header = serde_json::to_string(&EntryHeader {
            format: FORMAT,
            digest: digest.to_owned(),
            model_id: model_id.to_owned(),
        })
        .expect("header serializes");
        let mut tmp = NamedTempFile::new_in(parent)?;
        tmp.write_all(header.as_bytes())?;
        tmp.write_all(b"\n")?;
        tmp.write_all(text.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(dir.path());
        let d = "ab".to_owned() + &"0".repeat(62);
        assert!(c.get(&d).is_none());
        c.put(&d, "m", "line one\nline two /").unwrap();
        assert_eq!(c.entry_path(&d), dir.path().join("ab").join(&d));
        assert_eq!(c.get(&d).as_deref(), Some("line one\nline two /"));
        // A second writer of the same key leaves a readable entry.
        c.put(&d, "m", "line one\nline two /").unwrap();
        assert_eq!(c.get(&d).as_deref(), Some("line one\nline two /"));
    }

    #[test]
    fn mismatched_header_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(dir.path());
        c.put("aa11", "m", "x").unwrap();
        fs::rename(c.entry_path("aa11"), dir.path().join("aa").join("aa22")).unwrap();
        assert!(c.get("aa22").is_none());
    }
}
