//! Per-run manifest written next to every command's outputs.

use std::fs;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use gastnet::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// `sha256("blob <len>\0" ‖ bytes)`, hex encoded.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub metrics: Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
