//! Drives the pointing loop against a remote vision-language model that
//! speaks the OpenAI-compatible chat-completions protocol.
//!
//! Remote models are evaluation-only: no log-probabilities are requested,
//! so they cannot be trained through this client.

mod client;
mod config;
mod prompt;
pub mod stub;

pub use client::{Attempt, AttemptOutcome, RemoteReply, VlmClient, VlmError, VlmFactory, VlmPolicy};
pub use config::EndpointConfig;
pub use prompt::PromptTemplate;
