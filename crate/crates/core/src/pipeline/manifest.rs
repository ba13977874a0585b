//! Content hashes of every artifact in a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Path relative to the run directory, with `/` separators -> sha256.
    pub files: BTreeMap<String, String>,
    /// Scenario id -> reason it produced no log.
    pub failed: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new() -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            ..Self::default()
        }
    }

    /// Reads `dir/manifest.json`, or starts an empty one.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            record: 0,
            offset: 0,
            message: e.to_string(),
        })?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "{}: manifest schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Hashes `dir/rel` and records it.
    pub fn record(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let hash = sha256_file(&dir.join(rel))?;
        self.files.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Drops entries under `prefix`, e.g. before a stage rewrites them.
    pub fn forget_prefix(&mut self, prefix: &str) {
        self.files.retain(|k, _| !k.starts_with(prefix));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn save_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        let mut m = Manifest::new();
        m.record(dir.path(), "a.txt").unwrap();
        m.failed.insert("s1".into(), "gridlock".into());
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::open(dir.path()).unwrap(), m);
        m.forget_prefix("a");
        assert!(m.files.is_empty());
    }
}
