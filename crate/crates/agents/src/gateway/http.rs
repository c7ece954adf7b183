use std::time::Duration;

use serde::Deserialize;

use super::{ChatRequest, ChatResponse, Transport, TransportError};
use crate::events::Agent;

pub const ENDPOINT_VAR: &str = "TOPOPT_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "TOPOPT_LLM_API_KEY";
pub const REASONING_MODEL: &str = "reasoning-tier";
pub const ECONOMY_MODEL: &str = "economy-tier";

/// Gateway settings read from the environment. Per-agent model overrides use
/// `TOPOPT_MODEL_<AGENT>`, e.g. `TOPOPT_MODEL_CRITIC`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayEnv {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl GatewayEnv {
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok()?;
        Some(Self { endpoint, api_key: std::env::var(API_KEY_VAR).ok(), timeout: Duration::from_secs(120) })
    }

    /// Model identifier for `agent`: the environment override, else the
    /// reasoning tier for Scientist and Critic and the economy tier otherwise.
    pub fn model_for(agent: Agent) -> String {
        let var = format!("TOPOPT_MODEL_{}", agent.name().to_uppercase());
        std::env::var(var).unwrap_or_else(|_| {
            match agent {
                Agent::Scientist | Agent::Critic => REASONING_MODEL,
                _ => ECONOMY_MODEL,
            }
            .to_string()
        })
    }
}

/// Blocking HTTP transport speaking the chat-completions convention:
/// `POST {endpoint}/chat/completions`, reply text at
/// `choices[0].message.content`, token counts under `usage`.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(env: &GatewayEnv) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(env.timeout)
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let url = format!("{}/chat/completions", env.endpoint.trim_end_matches('/'));
        Ok(Self { client, url, api_key: env.api_key.clone() })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub(crate) fn decode_response(body: &str) -> Result<ChatResponse, TransportError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| TransportError::Malformed(e.to_string()))?;
    let text = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::Malformed("no message content in first choice".into()))?;
    Ok(ChatResponse {
        text,
        prompt_tokens: wire.usage.as_ref().and_then(|u| u.prompt_tokens),
        completion_tokens: wire.usage.as_ref().and_then(|u| u.completion_tokens),
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| TransportError::Connection(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status { status: status.as_u16(), body });
        }
        decode_response(&body)
    }
}
