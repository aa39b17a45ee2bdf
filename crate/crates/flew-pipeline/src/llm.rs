//! HTTP text-completion client used for abstract splitting.
//!
//! The pipeline talks to a single-turn completion endpoint: it POSTs a JSON
//! body with the model name and prompt, and expects a JSON reply carrying
//! the completion text. Failures (network, non-success status, malformed
//! reply) surface as [`flew_core::Error::SplitClient`], which lets the
//! splitting stage fall back to the heuristic splitter when configured to.

use std::fmt;
use std::time::Duration;

use flew_core::text_splitter::SplitClient;
use serde::{Deserialize, Serialize};

use crate::config::SplitterSettings;

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    completion: String,
}

/// Client for a remote completion service.
pub struct HttpSplitClient {
    endpoint: String,
    model: String,
    retries: u32,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpSplitClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpSplitClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("retries", &self.retries)
            .finish()
    }
}

impl HttpSplitClient {
    pub fn new(endpoint: &str, model: &str, timeout_secs: u64, retries: u32) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .build();
        HttpSplitClient {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            retries,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Builds a client from settings, or `None` when no endpoint is
    /// configured (the pipeline then splits heuristically).
    pub fn from_settings(settings: &SplitterSettings) -> Option<Self> {
        settings.endpoint.as_deref().map(|endpoint| {
            HttpSplitClient::new(
                endpoint,
                &settings.model,
                settings.timeout_secs,
                settings.retries,
            )
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let body = CompletionRequest {
            model: &self.model,
            prompt,
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let parsed: CompletionResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad completion payload: {e}"))?;
        Ok(parsed.completion)
    }
}

impl SplitClient for HttpSplitClient {
    fn complete(&self, prompt: &str) -> flew_core::Result<String> {
        let attempts = self.retries.saturating_add(1);
        let mut last_error = String::new();
        for _ in 0..attempts {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => last_error = e,
            }
        }
        Err(flew_core::Error::SplitClient(format!(
            "{} after {attempts} attempt(s): {last_error}",
            self.endpoint
        )))
    }
}
