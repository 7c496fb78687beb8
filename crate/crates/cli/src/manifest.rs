//! Run manifest written next to every output set.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rsm_core::eval::RngMetadata;

/// Provenance record: what command produced the sibling files, from which
/// config, with which tool version. Data files are listed with content
/// hashes so any of them can be traced back to this manifest.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub rng: RngMetadata,
    pub timestamp_unix: u64,
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

impl Manifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        Manifest {
            tool: "rsm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config_hash,
            rng: RngMetadata::default(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            files: BTreeMap::new(),
        }
    }

    pub fn record_file(&mut self, name: &str, contents: &[u8]) {
        self.files.insert(name.to_string(), sha256_hex(contents));
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)
    }
}
