//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use poivre_core::evalbench::SuccessRule;
use poivre_core::rollout::ParseFailure;
use poivre_core::toylab::ToyTrainConfig;
use poivre_vlm::EndpointConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub train: ToyTrainConfig,
    pub eval: EvalSettings,
    /// Remote model; when absent, evaluation uses a toy checkpoint.
    pub endpoint: Option<EndpointConfig>,
    pub infer: InferSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: ToyTrainConfig::default(),
            eval: EvalSettings::default(),
            endpoint: None,
            infer: InferSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Dataset JSONL; synthetic held-out tasks when absent.
    pub dataset: Option<PathBuf>,
    pub toy_tasks: usize,
    pub checkpoint: Option<PathBuf>,
    pub turns: usize,
    pub t_values: Vec<usize>,
    pub rule: SuccessRule,
    pub format: String,
    pub w2p: bool,
    pub on_parse_failure: ParseFailure,
    /// Sample from toy policies instead of taking the mean action.
    pub sample: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            toy_tasks: 512,
            checkpoint: None,
            turns: 2,
            t_values: vec![1, 2, 3, 4],
            rule: SuccessRule::AnyPointInMask,
            format: "json".into(),
            w2p: false,
            on_parse_failure: ParseFailure::Penalize,
            sample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferSettings {
    pub image: Option<PathBuf>,
    pub query: Option<String>,
    /// Scene seed used when no image is given.
    pub toy_seed: u64,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            image: None,
            query: None,
            toy_seed: 0,
        }
    }
}

pub fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
