use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::output::CliError;

/// Optional defaults read from `--config`. Command-line flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threshold: Option<u64>,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub criterion: Option<String>,
    pub seed: Option<u64>,
    pub provider: Option<String>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {}", path.display(), e.message())))
    }
}

/// Fully resolved settings of one run, echoed next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<String>,
    pub seed: u64,
    pub provider: Option<String>,
    pub workers: Option<usize>,
}
