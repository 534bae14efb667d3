//! `manifest.json`: what ran, with which config, and what it wrote.

use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Fresh per invocation.
    pub run_id: String,
    /// Stable digest of the config and input contents; the `run_id` column
    /// of CSV outputs.
    pub config_digest: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub git_describe: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: Status,
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Hex SHA-256 of `parts`, each length-prefixed, cut to 16 digits.
pub fn digest<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Creates `out_dir` and writes the manifest in the running state.
    pub fn begin(out_dir: &Path, command: &str, config: serde_json::Value, config_digest: String) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let m = Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            config_digest,
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            git_describe: git_describe(),
            started_at: now(),
            finished_at: None,
            status: Status::Running,
            error: None,
            outputs: Vec::new(),
            path: out_dir.join("manifest.json"),
        };
        m.write()?;
        Ok(m)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&mut self, output: &Path) {
        self.outputs.push(output.to_path_buf());
    }

    pub fn finish(&mut self, error: Option<String>) -> Result<()> {
        self.finished_at = Some(now());
        self.status = if error.is_some() { Status::Failed } else { Status::Succeeded };
        self.error = error;
        self.write()
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&self.path, text + "\n").with_context(|| format!("writing {}", self.path.display()))
    }
}
