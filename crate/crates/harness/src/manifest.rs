//! Run manifests: what was run, with which seed, and digests of what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub artifact_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// "running", "ok" or "failed: <reason>".
    pub status: String,
    pub outputs: Vec<OutputDigest>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command_line: Vec<String>, config: serde_json::Value, master_seed: u64) -> Self {
        RunManifest {
            command_line,
            config,
            master_seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, status: impl Into<String>, outputs: &[PathBuf]) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.into();
        self.outputs = outputs
            .iter()
            .map(|p| Ok(OutputDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let err = |source| HarnessError::Write { path: path.to_path_buf(), source };
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

/// `dir/stem.<suffix>` next to `out`: `risk.csv` with `slope.json` gives
/// `risk.slope.json`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}
