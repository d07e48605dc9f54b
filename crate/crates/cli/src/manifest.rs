//! `manifest.json`: per-directory record of every artifact's SHA-256, the
//! producing config hash and seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sisgan::io::write_atomic;
use sisgan::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub config_hash: String,
    pub seed: String,
    pub kind: String,
}

pub type Manifest = BTreeMap<String, Entry>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::InvariantViolation(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Writes `bytes` to `dir/name` atomically and records it in the manifest.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8], kind: &str, config_hash: &str, seed: &str) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    let mut m = load(dir)?;
    m.insert(
        name.to_string(),
        Entry {
            sha256: sha256_hex(bytes),
            config_hash: config_hash.to_string(),
            seed: seed.to_string(),
            kind: kind.to_string(),
        },
    );
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}
