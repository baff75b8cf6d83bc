//! Provenance record embedded in every artifact the command-line tool writes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::{to_canonical_json, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments exactly as given, without the program name.
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    /// Wall-clock seconds; the only field allowed to differ between reruns.
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), FormatError> {
        let bytes = std::fs::read(path).map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.input_digests
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the timestamp zeroed.
    pub fn canonical_digest(&self) -> String {
        let mut copy = self.clone();
        copy.timestamp_unix = 0;
        let text = to_canonical_json(&copy).expect("manifest serializes");
        sha256_hex(text.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_timestamp() {
        let mut a = RunManifest::new("bounds", vec!["--gamma".into(), "1".into()]).with_seed("seed", 3);
        let mut b = a.clone();
        a.timestamp_unix = 1;
        b.timestamp_unix = 2;
        assert_eq!(a.canonical_digest(), b.canonical_digest());
        b.seeds.insert("seed".into(), 4);
        assert_ne!(a.canonical_digest(), b.canonical_digest());
    }

    #[test]
    fn known_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
