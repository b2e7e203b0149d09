//! Versioned on-disk engine state for the ask/tell verbs.

use std::path::Path;

use pesc::scheduler::Engine;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const STATE_FORMAT: &str = "pesc-engine-state";
pub const STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedState {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub engine: Engine,
}

impl SavedState {
    pub fn new(config: RunConfig, engine: Engine) -> Self {
        Self { format: STATE_FORMAT.into(), version: STATE_VERSION, config, engine }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::State(format!("not valid JSON: {e}")))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(STATE_FORMAT) {
            return Err(CliError::State(format!("format tag is {format:?}, expected \"{STATE_FORMAT}\"")));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(STATE_VERSION as u64) {
            return Err(CliError::State(format!("format version {version:?} is not supported (this build reads version {STATE_VERSION})")));
        }
        serde_json::from_value(value).map_err(|e| CliError::State(format!("version {STATE_VERSION} state is corrupt: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Write through a temporary file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(tmp.path(), self.to_json()).map_err(|e| CliError::Io(e.to_string()))?;
        tmp.persist(path).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }
}
