//! Run manifests: a flat key=value snapshot tying a pipeline phase to its
//! artifact files by content hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 of a file, lowercase hex.
pub fn sha256_hex_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Ordered key=value manifest; keys are unique, iteration is sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::MissingArtifact(format!("manifest key `{key}`")))
    }

    /// Records `<name>=<file>` and `<name>_sha256=<hash>` for an artifact
    /// that must exist on disk.
    pub fn record_artifact(&mut self, name: &str, dir: &Path, file: &str) -> Result<()> {
        let hash = sha256_hex_file(&dir.join(file))?;
        self.set(name, file);
        self.set(&format!("{name}_sha256"), hash);
        Ok(())
    }

    /// Resolves a recorded artifact path and verifies its content hash.
    pub fn verify_artifact(&self, name: &str, dir: &Path) -> Result<std::path::PathBuf> {
        let file = self.require(name)?;
        let expected = self.require(&format!("{name}_sha256"))?;
        let path = dir.join(file);
        let actual = sha256_hex_file(&path)?;
        if actual != expected {
            return Err(Error::MissingArtifact(format!(
                "artifact `{file}` hash mismatch: expected {expected}, found {actual}"
            )));
        }
        Ok(path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::MalformedRecord {
                line: idx + 1,
                reason: format!("expected key=value, got `{line}`"),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_sorted() {
        let mut m = Manifest::new();
        m.set("zeta", 1);
        m.set("alpha", "x");
        let text = m.to_text();
        assert_eq!(text, "alpha=x\nzeta=1\n");
        assert_eq!(Manifest::from_text(&text).unwrap(), m);
    }

    #[test]
    fn artifact_hash_verification() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "payload").unwrap();
        let mut m = Manifest::new();
        m.record_artifact("a", dir.path(), "a.txt").unwrap();
        assert!(m.verify_artifact("a", dir.path()).is_ok());
        std::fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert!(m.verify_artifact("a", dir.path()).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
