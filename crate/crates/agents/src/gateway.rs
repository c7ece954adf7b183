//! Chat-completions gateway: five-section prompt templates, persona handles
//! (deterministic, HTTP-backed or scripted mock), retries and structured
//! output parsing.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use topopt_core::problem::{deserialize_with_path, SpecError};

use crate::events::Agent;

mod http;

pub use http::{GatewayEnv, HttpTransport, API_KEY_VAR, ENDPOINT_VAR};

pub const SECTION_HEADERS: [&str; 5] = ["# Role", "# Inputs", "# Instructions", "# Rules", "# Output format"];

/// Appendable document activated when any trigger keyword occurs
/// (case-insensitively) in the template's trigger slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalContext {
    pub name: String,
    pub triggers: Vec<String>,
    pub document: String,
}

impl ConditionalContext {
    pub fn is_triggered_by(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.triggers.iter().any(|t| lower.contains(&t.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub role: String,
    pub input_slots: Vec<String>,
    pub instructions: String,
    pub rules: String,
    pub output_format: String,
    pub contexts: Vec<ConditionalContext>,
    /// Slot whose value is scanned for context triggers.
    pub trigger_slot: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    pub contexts: Vec<String>,
}

impl PromptTemplate {
    /// Names of the contexts `inputs` would activate.
    pub fn active_contexts(&self, inputs: &BTreeMap<String, String>) -> Vec<String> {
        let Some(text) = self.trigger_slot.as_ref().and_then(|s| inputs.get(s)) else {
            return Vec::new();
        };
        self.contexts.iter().filter(|c| c.is_triggered_by(text)).map(|c| c.name.clone()).collect()
    }
}

/// Renders the system message (the five sections in fixed order plus any
/// triggered context documents) and a short user turn.
pub fn render_prompt(template: &PromptTemplate, inputs: &BTreeMap<String, String>) -> Result<RenderedPrompt, GatewayError> {
    for slot in &template.input_slots {
        if !inputs.contains_key(slot) {
            return Err(GatewayError::MissingSlot(slot.clone()));
        }
    }
    let mut text = String::new();
    let section = |text: &mut String, header: &str, body: &str| {
        text.push_str(header);
        text.push_str("\n\n");
        text.push_str(body.trim_end());
        text.push_str("\n\n");
    };
    section(&mut text, SECTION_HEADERS[0], &template.role);
    let mut inputs_text = String::new();
    for slot in &template.input_slots {
        inputs_text.push_str(&format!("## {slot}\n\n{}\n\n", inputs[slot].trim_end()));
    }
    section(&mut text, SECTION_HEADERS[1], &inputs_text);
    section(&mut text, SECTION_HEADERS[2], &template.instructions);
    section(&mut text, SECTION_HEADERS[3], &template.rules);
    section(&mut text, SECTION_HEADERS[4], &template.output_format);
    let contexts = template.active_contexts(inputs);
    for c in template.contexts.iter().filter(|c| contexts.contains(&c.name)) {
        section(&mut text, &format!("# Context: {}", c.name), &c.document);
    }
    Ok(RenderedPrompt {
        messages: vec![
            ChatMessage::system(text.trim_end().to_string()),
            ChatMessage::user("Produce the output for the inputs above, following the output format exactly."),
        ],
        contexts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Content {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Content,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: "system".into(), content: Content::Text(text.into()) }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: "user".into(), content: Content::Text(text.into()) }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: Content::Text(text.into()) }
    }

    /// User turn carrying PNG images as data URLs after a text part.
    pub fn user_with_images(text: impl Into<String>, pngs: &[Vec<u8>]) -> Self {
        use base64::Engine;
        let mut parts = vec![ContentPart::Text { text: text.into() }];
        for png in pngs {
            let data = base64::engine::general_purpose::STANDARD.encode(png);
            parts.push(ContentPart::ImageUrl { image_url: ImageUrl { url: format!("data:image/png;base64,{data}") } });
        }
        Self { role: "user".into(), content: Content::Parts(parts) }
    }
}

/// Registered agent-output schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    SpecFragment,
    FindingList,
    Verdict,
    RefinementDirective,
    ReportText,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::SpecFragment => "spec_fragment",
            Schema::FindingList => "finding_list",
            Schema::Verdict => "verdict",
            Schema::RefinementDirective => "refinement_directive",
            Schema::ReportText => "report_text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_format: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    /// Client errors other than rate limiting are not worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Malformed(_) => false,
            _ => true,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Per-agent model configuration. Temperature is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub model: String,
    pub max_tokens: u32,
    pub schema: Schema,
    /// Whether the endpoint accepts image content parts.
    #[serde(default)]
    pub supports_images: bool,
}

impl PersonaConfig {
    pub const TEMPERATURE: f64 = 0.0;

    pub fn temperature(&self) -> f64 {
        Self::TEMPERATURE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Clone)]
pub enum PersonaMode {
    Deterministic,
    Llm { config: PersonaConfig, transport: Arc<dyn Transport>, retry: RetryPolicy },
    Mock { transcript: VecDeque<String>, model: String },
}

impl fmt::Debug for PersonaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersonaMode::Deterministic => f.write_str("Deterministic"),
            PersonaMode::Llm { config, .. } => f.debug_struct("Llm").field("config", config).finish_non_exhaustive(),
            PersonaMode::Mock { transcript, .. } => f.debug_struct("Mock").field("remaining", &transcript.len()).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PersonaHandle {
    pub agent: Agent,
    pub mode: PersonaMode,
    pub template: PromptTemplate,
}

/// Audit record for one gateway exchange (including its re-ask, if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub agent: Agent,
    pub model: String,
    pub schema: Schema,
    pub retries: u32,
    pub reasked: bool,
    pub contexts: Vec<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub retries: u32,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("missing prompt input `{0}`")]
    MissingSlot(String),
    #[error("deterministic personas do not call the gateway")]
    Deterministic,
    #[error("mock transcript exhausted")]
    TranscriptExhausted,
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("{schema} output rejected after re-ask: {error}")]
    Schema { schema: Schema, error: SchemaError },
}

/// Strict parse failure, with the field path where one applies.
#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("{}{message}", path.as_ref().map(|p| format!("at `{p}`: ")).unwrap_or_default())]
pub struct SchemaError {
    pub path: Option<String>,
    pub message: String,
}

impl SchemaError {
    pub fn new(path: Option<String>, message: impl Into<String>) -> Self {
        Self { path, message: message.into() }
    }
}

impl From<SpecError> for SchemaError {
    fn from(e: SpecError) -> Self {
        Self { path: e.path().map(str::to_string), message: e.to_string() }
    }
}

impl PersonaHandle {
    pub fn deterministic(agent: Agent, template: PromptTemplate) -> Self {
        Self { agent, mode: PersonaMode::Deterministic, template }
    }

    pub fn mock(agent: Agent, template: PromptTemplate, transcript: impl IntoIterator<Item = String>) -> Self {
        Self {
            agent,
            mode: PersonaMode::Mock { transcript: transcript.into_iter().collect(), model: "mock".into() },
            template,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.mode, PersonaMode::Deterministic)
    }

    pub fn model(&self) -> &str {
        match &self.mode {
            PersonaMode::Deterministic => "deterministic",
            PersonaMode::Llm { config, .. } => &config.model,
            PersonaMode::Mock { model, .. } => model,
        }
    }

    pub fn supports_images(&self) -> bool {
        matches!(&self.mode, PersonaMode::Llm { config, .. } if config.supports_images)
    }

    /// One completion: a request with retries in LLM mode, the next scripted
    /// entry in mock mode.
    pub fn complete(&mut self, messages: &[ChatMessage]) -> Result<Completion, GatewayError> {
        match &mut self.mode {
            PersonaMode::Deterministic => Err(GatewayError::Deterministic),
            PersonaMode::Mock { transcript, .. } => transcript
                .pop_front()
                .map(|text| Completion { text, retries: 0, prompt_tokens: None, completion_tokens: None })
                .ok_or(GatewayError::TranscriptExhausted),
            PersonaMode::Llm { config, transport, retry } => {
                let request = ChatRequest {
                    model: config.model.clone(),
                    temperature: config.temperature(),
                    max_tokens: config.max_tokens,
                    messages: messages.to_vec(),
                    response_format: Some(serde_json::json!({ "type": "json_object" })),
                };
                let mut attempt = 0;
                loop {
                    match transport.send(&request) {
                        Ok(r) => {
                            return Ok(Completion {
                                text: r.text,
                                retries: attempt,
                                prompt_tokens: r.prompt_tokens,
                                completion_tokens: r.completion_tokens,
                            })
                        }
                        Err(e) if e.is_retryable() && attempt + 1 < retry.attempts => {
                            std::thread::sleep(retry.delay(attempt));
                            attempt += 1;
                        }
                        Err(last) => return Err(GatewayError::Transport { attempts: attempt + 1, last }),
                    }
                }
            }
        }
    }

    /// Renders the template, completes, and parses the reply as `T`. A
    /// failed parse triggers exactly one re-ask quoting the error.
    pub fn ask<T: DeserializeOwned>(
        &mut self,
        inputs: &BTreeMap<String, String>,
        schema: Schema,
        images: &[Vec<u8>],
    ) -> Result<(T, CallRecord), GatewayError> {
        self.ask_checked(inputs, schema, images, |_: &T| Ok(()))
    }

    /// [`ask`](Self::ask) with a semantic check run after a successful parse;
    /// a rejected value is re-asked like a parse failure.
    pub fn ask_checked<T: DeserializeOwned>(
        &mut self,
        inputs: &BTreeMap<String, String>,
        schema: Schema,
        images: &[Vec<u8>],
        check: impl Fn(&T) -> Result<(), SchemaError>,
    ) -> Result<(T, CallRecord), GatewayError> {
        let parse = |text: &str| parse_structured::<T>(text, schema).and_then(|v| check(&v).map(|()| v));
        let prompt = render_prompt(&self.template, inputs)?;
        let mut messages = prompt.messages;
        if !images.is_empty() && self.supports_images() {
            messages.push(ChatMessage::user_with_images("Rendered design and convergence history.", images));
        }
        let mut record = CallRecord {
            agent: self.agent,
            model: self.model().to_string(),
            schema,
            retries: 0,
            reasked: false,
            contexts: prompt.contexts,
            prompt_tokens: None,
            completion_tokens: None,
        };
        let first = self.complete(&messages)?;
        record.tally(&first);
        match parse(&first.text) {
            Ok(v) => Ok((v, record)),
            Err(error) => {
                messages.push(ChatMessage::assistant(first.text));
                messages.push(ChatMessage::user(format!(
                    "The previous reply could not be parsed as {schema}: {error}. Reply again with only the corrected output."
                )));
                record.reasked = true;
                let second = self.complete(&messages)?;
                record.tally(&second);
                parse(&second.text)
                    .map(|v| (v, record))
                    .map_err(|error| GatewayError::Schema { schema, error })
            }
        }
    }
}

impl CallRecord {
    fn tally(&mut self, c: &Completion) {
        self.retries += c.retries;
        let add = |acc: &mut Option<u64>, v: Option<u64>| {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0) + v);
            }
        };
        add(&mut self.prompt_tokens, c.prompt_tokens);
        add(&mut self.completion_tokens, c.completion_tokens);
    }
}

/// Slice of `text` holding the JSON document: code fences are stripped and
/// anything before the first bracket is dropped.
fn json_body(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    let t = t.strip_suffix("```").unwrap_or(t).trim();
    match t.find(['{', '[']) {
        Some(i) => &t[i..],
        None => t,
    }
}

/// Closes any open strings, objects and arrays of a cut-off document.
fn close_truncated(text: &str) -> String {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                stack.pop();
            }
            _ => {}
        }
    }
    let mut out = text.trim_end().to_string();
    if in_string {
        out.push('"');
    }
    while let Some(c) = stack.pop() {
        out.push(c);
    }
    out
}

/// Prefixes of a truncated document that end on a value boundary, longest
/// first: the whole text, then cuts before each comma and after each opening
/// bracket.
fn truncation_candidates(text: &str) -> Vec<&str> {
    let mut cuts = vec![text.len()];
    for (i, c) in text.char_indices().rev() {
        match c {
            ',' => cuts.push(i),
            '{' | '[' => cuts.push(i + 1),
            _ => {}
        }
    }
    cuts.into_iter().map(|i| &text[..i]).collect()
}

/// Strict parse of an agent reply against `schema`'s type `T`.
///
/// A truncated document is closed and re-parsed so that the error names the
/// first field the truncation lost.
pub fn parse_structured<T: DeserializeOwned>(text: &str, schema: Schema) -> Result<T, SchemaError> {
    let body = json_body(text);
    match deserialize_with_path::<T>(body) {
        Ok(v) => Ok(v),
        Err(SpecError::Syntax { message, .. }) if message.contains("EOF") => {
            for prefix in truncation_candidates(body) {
                if let Err(e @ SpecError::MissingField { .. }) = deserialize_with_path::<T>(&close_truncated(prefix)) {
                    return Err(SchemaError::new(
                        e.path().map(str::to_string),
                        format!("truncated {schema} output: {e}"),
                    ));
                }
            }
            Err(SchemaError::new(None, format!("truncated {schema} output: {message}")))
        }
        Err(e) => Err(e.into()),
    }
}
