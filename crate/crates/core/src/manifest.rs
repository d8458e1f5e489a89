//! Checksummed record of a run's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub version: String,
    pub master_seed: u64,
    /// File name to sha256, for every artifact except the manifest.
    pub files: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, master_seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            version: env!("CARGO_PKG_VERSION").into(),
            master_seed,
            files: BTreeMap::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.insert(name.into(), sha256_hex(bytes));
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest always serializes");
        write_atomic(&dir.join(MANIFEST_FILE), format!("{text}\n").as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
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
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("sweep", "x = 1\n", 9);
        m.record("a.csv", b"1,2\n");
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
