use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::client::VlmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g.
    /// `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in configuration.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    /// Extra attempts after the first one.
    pub max_retries: u32,
    /// Pause before retry `k` is `backoff_ms * k`.
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
    /// Concurrent trajectories during evaluation.
    pub parallelism: usize,
    /// Append every request and response as JSON lines here.
    pub transcript: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: Some("POIVRE_API_KEY".into()),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 250,
            temperature: 0.0,
            max_tokens: 256,
            template: "poivre-v1".into(),
            parallelism: 4,
            transcript: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), VlmError> {
        if self.base_url.trim().is_empty() {
            return Err(VlmError::Config("base_url is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(VlmError::Config("timeout_secs must be > 0".into()));
        }
        if self.model.trim().is_empty() {
            return Err(VlmError::Config("model is empty".into()));
        }
        if self.parallelism == 0 {
            return Err(VlmError::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}
