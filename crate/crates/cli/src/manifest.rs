use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command: the resolved configuration and
/// the inputs that are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    pub code_version: String,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: RunConfig, out_dir: PathBuf) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            out_dir,
            config,
            distances: None,
        }
    }

    pub fn write(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(poivre_core::Error::from)?;
        let mut text = serde_json::to_string_pretty(self).map_err(poivre_core::Error::from)?;
        text.push('\n');
        std::fs::write(self.out_dir.join(MANIFEST_FILE), text).map_err(poivre_core::Error::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => poivre_core::Error::MissingFile(path.to_path_buf()),
            _ => poivre_core::Error::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
