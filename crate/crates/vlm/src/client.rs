use std::fs::{File, OpenOptions};
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use poivre_core::canvas::{to_data_url, Raster};
use poivre_core::geometry::Point;
use poivre_core::rollout::{parse_points, Action, Observation, Policy, PolicyFactory};
use poivre_core::task::PointingTask;

use crate::config::EndpointConfig;
use crate::prompt::PromptTemplate;

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("endpoint configuration: {0}")]
    Config(String),

    #[error("environment variable {0} holding the API key is not set")]
    MissingKey(String),

    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("endpoint answered HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("no parseable point after {attempts} attempt(s); last reply {reply:?}")]
    Parse { attempts: usize, reply: String },

    #[error(transparent)]
    Core(#[from] poivre_core::Error),
}

impl From<VlmError> for poivre_core::Error {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::Parse { reply, .. } => poivre_core::Error::Parse(reply),
            VlmError::Core(c) => c,
            VlmError::Config(m) => poivre_core::Error::invalid(m),
            other => poivre_core::Error::Endpoint(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok,
    Transport { message: String },
    Status { status: u16 },
    ParseFailure { reply: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub turn: usize,
    pub number: usize,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone)]
pub struct RemoteReply {
    pub points: Vec<Point>,
    pub text: String,
    pub attempts: Vec<Attempt>,
}

/// Blocking chat-completions client. Safe to share across threads.
pub struct VlmClient {
    cfg: EndpointConfig,
    template: PromptTemplate,
    agent: ureq::Agent,
    api_key: Option<String>,
    transcript: Option<Mutex<File>>,
}

impl std::fmt::Debug for VlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VlmClient")
            .field("cfg", &self.cfg)
            .field("template", &self.template.id)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl VlmClient {
    /// Reads the API key from the configured environment variable, if any.
    pub fn new(cfg: EndpointConfig) -> Result<Self, VlmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| VlmError::MissingKey(var.clone()))?),
            None => None,
        };
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: EndpointConfig, api_key: Option<String>) -> Result<Self, VlmError> {
        cfg.validate()?;
        let template = PromptTemplate::by_id(&cfg.template)?;
        template.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let transcript = match &cfg.transcript {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(poivre_core::Error::from)?,
            )),
            None => None,
        };
        Ok(Self {
            cfg,
            template,
            agent,
            api_key,
            transcript,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// The JSON request for one turn: the templated prompt plus the
    /// latest image as a PNG data URL.
    pub fn build_request(&self, image: &Raster, query: &str, turn: usize) -> Result<Value, VlmError> {
        Ok(json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": self.template.render(query, turn)},
                    {"type": "image_url", "image_url": {"url": to_data_url(image)?}},
                ],
            }],
        }))
    }

    /// Asks for points on the latest image. Transport errors, HTTP 429/5xx
    /// and unparseable replies are retried up to `max_retries` times.
    pub fn remote_act(&self, images: &[Raster], query: &str, turn: usize) -> Result<RemoteReply, VlmError> {
        let image = images
            .last()
            .ok_or_else(|| VlmError::Config("no image to send".into()))?;
        let body = self.build_request(image, query, turn)?;
        let body_text = serde_json::to_string(&body).map_err(poivre_core::Error::from)?;
        let url = self.cfg.completions_url();
        let max_attempts = self.cfg.max_retries as usize + 1;
        let mut attempts = Vec::new();
        let mut last_err = None;

        for number in 1..=max_attempts {
            if number > 1 && self.cfg.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms * (number as u64 - 1)));
            }
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let (outcome, err, reply) = match req.send(body_text.as_str()) {
                Err(e) => {
                    let message = e.to_string();
                    (
                        AttemptOutcome::Transport {
                            message: message.clone(),
                        },
                        Some(VlmError::Transport {
                            attempts: number,
                            message,
                        }),
                        None,
                    )
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.into_body().read_to_string().unwrap_or_default();
                    self.log_transcript(turn, number, &body, status, &text);
                    if status == 200 {
                        let content = reply_content(&text);
                        match parse_points(&content) {
                            Ok(points) => (AttemptOutcome::Ok, None, Some((points, content))),
                            Err(_) => (
                                AttemptOutcome::ParseFailure {
                                    reply: content.clone(),
                                },
                                Some(VlmError::Parse {
                                    attempts: number,
                                    reply: content,
                                }),
                                None,
                            ),
                        }
                    } else {
                        let retryable = status == 429 || status >= 500;
                        let e = VlmError::Status { status, body: text };
                        attempts.push(Attempt {
                            turn,
                            number,
                            outcome: AttemptOutcome::Status { status },
                        });
                        tracing::info!(turn, attempt = number, status, "endpoint returned an error status");
                        if !retryable {
                            return Err(e);
                        }
                        last_err = Some(e);
                        continue;
                    }
                }
            };
            tracing::info!(turn, attempt = number, outcome = ?outcome, "chat request");
            attempts.push(Attempt {
                turn,
                number,
                outcome,
            });
            if let Some((points, text)) = reply {
                return Ok(RemoteReply {
                    points,
                    text,
                    attempts,
                });
            }
            last_err = err;
        }
        Err(match last_err.expect("at least one attempt") {
            VlmError::Status { status, body } => VlmError::Transport {
                attempts: attempts.len(),
                message: format!("HTTP {status}: {body}"),
            },
            e => e,
        })
    }

    fn log_transcript(&self, turn: usize, attempt: usize, request: &Value, status: u16, response: &str) {
        let Some(file) = &self.transcript else {
            return;
        };
        let line = json!({
            "turn": turn,
            "attempt": attempt,
            "request": request,
            "status": status,
            "response": response,
        });
        let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!("could not write transcript: {e}");
        }
    }
}

/// The assistant text of a chat completion, or the raw body if it is not
/// one (the point parser gets a chance either way).
fn reply_content(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    match v.pointer("/choices/0/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("\n"),
        _ => body.to_string(),
    }
}

/// A remote model as a [`Policy`] for one trajectory.
#[derive(Debug)]
pub struct VlmPolicy {
    client: Arc<VlmClient>,
    attempts: Vec<Attempt>,
}

impl VlmPolicy {
    pub fn new(client: Arc<VlmClient>) -> Self {
        Self {
            client,
            attempts: Vec::new(),
        }
    }

    /// Every request made so far, including failed ones.
    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }
}

impl Policy for VlmPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> poivre_core::Result<Action> {
        match self.client.remote_act(obs.images, obs.query, obs.turn) {
            Ok(reply) => {
                self.attempts.extend(reply.attempts);
                Ok(Action {
                    points: reply.points,
                    logprob: None,
                })
            }
            Err(e) => {
                let n = match &e {
                    VlmError::Transport { attempts, .. } | VlmError::Parse { attempts, .. } => *attempts,
                    _ => 1,
                };
                tracing::warn!(turn = obs.turn, attempts = n, "remote turn failed: {e}");
                Err(e.into())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct VlmFactory {
    pub client: Arc<VlmClient>,
}

impl VlmFactory {
    pub fn new(client: VlmClient) -> Self {
        Self {
            client: Arc::new(client),
        }
    }
}

impl PolicyFactory for VlmFactory {
    type Policy = VlmPolicy;

    fn spawn(&self, _task: &PointingTask, _stream: u64) -> poivre_core::Result<VlmPolicy> {
        Ok(VlmPolicy::new(Arc::clone(&self.client)))
    }

    fn id(&self) -> String {
        format!("vlm:{}", self.client.cfg.model)
    }
}
