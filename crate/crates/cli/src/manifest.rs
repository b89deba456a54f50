use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use patchformer::codec::canonical_json;
use patchformer::Result;
use serde::{Deserialize, Serialize};

use crate::Command;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to re-run a command. Written before any computation;
/// `wall_clock_s` is filled in when the run finishes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub invocation: Command,
    pub resolved: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub wall_clock_s: Option<f64>,
}

impl RunManifest {
    pub fn new(invocation: &Command, resolved: serde_json::Value, seed: Option<u64>, artifacts: Vec<PathBuf>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            command: invocation.name().to_string(),
            invocation: invocation.clone(),
            resolved,
            seed,
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, canonical_json(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
