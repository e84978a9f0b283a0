//! Chat-completions endpoint respondent.
//!
//! Each exchange is a single request carrying one user message (the built
//! prompt); nothing from earlier items or attempts is sent along.

use std::time::Duration;

use psymetric_core::gateway::{Decoding, Exchange, RespondError, Respondent, RespondentKind, RespondentSpec};
use psymetric_core::study::{DefaultFactory, RespondentFactory, StudyError};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("respondent {0} is not an llm_endpoint spec")]
    WrongKind(String),
    #[error("{0} needs endpoint_url and credentials_ref")]
    Incomplete(String),
    #[error("environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatRespondent {
    model: String,
    endpoint: String,
    api_key: String,
    decoding: Decoding,
    client: Client,
}

impl std::fmt::Debug for ChatRespondent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatRespondent")
            .field("model", &self.model)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl ChatRespondent {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    /// Builds a respondent from a spec, reading the API key from the
    /// environment variable the spec names.
    pub fn from_spec(spec: &RespondentSpec) -> Result<Self, LlmError> {
        Self::from_spec_with(spec, |name| std::env::var(name).ok(), Self::DEFAULT_TIMEOUT)
    }

    /// Like [`ChatRespondent::from_spec`] with an explicit variable lookup.
    pub fn from_spec_with(
        spec: &RespondentSpec,
        lookup: impl Fn(&str) -> Option<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        if spec.kind != RespondentKind::LlmEndpoint {
            return Err(LlmError::WrongKind(spec.model_name.clone()));
        }
        let (Some(endpoint), Some(var)) = (&spec.endpoint_url, &spec.credentials_ref) else {
            return Err(LlmError::Incomplete(spec.model_name.clone()));
        };
        let api_key = lookup(var).ok_or_else(|| LlmError::MissingCredentials(var.clone()))?;
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Client(e.to_string()))?;
        Ok(Self {
            model: spec.model_name.clone(),
            endpoint: endpoint.clone(),
            api_key,
            decoding: spec.decoding.clone(),
            client,
        })
    }
}

impl Respondent for ChatRespondent {
    fn identity(&self) -> String {
        self.model.clone()
    }

    fn respond(&self, exchange: &Exchange<'_>) -> Result<String, RespondError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [Message {
                role: "user",
                content: exchange.prompt,
            }],
            temperature: self.decoding.temperature,
            top_p: self.decoding.top_p,
            max_tokens: self.decoding.max_tokens,
            // the per-run seed, not the base seed from the spec
            seed: exchange.seed,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| RespondError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(RespondError::Auth(format!("{status} from {}", self.endpoint)));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(RespondError::Transport(format!("{status}: {snippet}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| RespondError::Transport(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| RespondError::Transport("response has no message content".into()))
    }
}

/// Builds chat respondents for `llm_endpoint` specs and leaves every other
/// kind to [`DefaultFactory`].
#[derive(Debug, Default, Clone, Copy)]
pub struct LlmFactory;

impl RespondentFactory for LlmFactory {
    fn build(&self, spec: &RespondentSpec) -> Result<Box<dyn Respondent>, StudyError> {
        match spec.kind {
            RespondentKind::LlmEndpoint => {
                spec.validate()?;
                let r = ChatRespondent::from_spec(spec).map_err(|e| StudyError::Plan(e.to_string()))?;
                Ok(Box::new(r))
            }
            _ => DefaultFactory.build(spec),
        }
    }
}
