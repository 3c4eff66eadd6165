//! Dispatch of rendered prompts to an OpenAI-compatible chat-completions
//! endpoint, with per-model processing-mode control, retries and
//! client-side latency measurement.
//!
//! Latency is the client's wall clock from sending a request to holding
//! the complete response body, so it includes network, queueing and
//! generation time. Only the attempt that produced the returned response
//! is counted.

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::parser::{LabelVocabulary, ParserOptions, ReasoningDelimiters};
use crate::prompt::RenderedPrompt;
use crate::results::FailureKind;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const STANDARD_TOP_P: f64 = 0.8;
pub const REASONING_TOP_P: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingMode {
    Standard,
    Reasoning,
    EffortLow,
    EffortMedium,
    EffortHigh,
}

impl ProcessingMode {
    pub fn is_effort(self) -> bool {
        matches!(
            self,
            ProcessingMode::EffortLow | ProcessingMode::EffortMedium | ProcessingMode::EffortHigh
        )
    }

    pub fn effort_level(self) -> Option<&'static str> {
        match self {
            ProcessingMode::EffortLow => Some("low"),
            ProcessingMode::EffortMedium => Some("medium"),
            ProcessingMode::EffortHigh => Some("high"),
            _ => None,
        }
    }

    /// Short tag used in tables and heatmap rows.
    pub fn short(self) -> &'static str {
        match self {
            ProcessingMode::Standard => "S",
            ProcessingMode::Reasoning => "R",
            ProcessingMode::EffortLow => "Low",
            ProcessingMode::EffortMedium => "Med",
            ProcessingMode::EffortHigh => "High",
        }
    }

    /// `(temperature, top_p)` used when a config leaves them unset.
    /// Effort modes leave top_p to the server.
    pub fn default_sampling(self) -> (f64, Option<f64>) {
        match self {
            ProcessingMode::Standard => (DEFAULT_TEMPERATURE, Some(STANDARD_TOP_P)),
            ProcessingMode::Reasoning => (DEFAULT_TEMPERATURE, Some(REASONING_TOP_P)),
            _ => (DEFAULT_TEMPERATURE, None),
        }
    }
}

impl fmt::Display for ProcessingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProcessingMode::Standard => "standard",
            ProcessingMode::Reasoning => "reasoning",
            ProcessingMode::EffortLow => "effort_low",
            ProcessingMode::EffortMedium => "effort_medium",
            ProcessingMode::EffortHigh => "effort_high",
        };
        f.write_str(s)
    }
}

/// How a processing mode is expressed on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeAdapter {
    /// `/think` or `/no_think` appended to the system text plus
    /// `chat_template_kwargs.enable_thinking`.
    ThinkToggle,
    /// `reasoning_effort` = low | medium | high.
    EffortField,
    /// Mode is recorded but not sent.
    #[default]
    None,
}

impl ModeAdapter {
    pub fn supports_effort(self) -> bool {
        matches!(self, ModeAdapter::EffortField)
    }
}

/// One evaluable configuration, with sampling parameters resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub config_id: String,
    /// Display name for tables; defaults to `config_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub endpoint_url: String,
    pub model_id: String,
    pub processing_mode: ProcessingMode,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub mode_adapter: ModeAdapter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware_note: Option<String>,
    /// Parameter count in billions, used to order heatmap rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_billions: Option<f64>,
    #[serde(default)]
    pub delimiters: ReasoningDelimiters,
    #[serde(default)]
    pub lenient_labels: bool,
}

impl ModelConfig {
    /// A config with the mode's default sampling parameters and a 2048-token cap.
    pub fn new(
        config_id: impl Into<String>,
        endpoint_url: impl Into<String>,
        model_id: impl Into<String>,
        processing_mode: ProcessingMode,
        mode_adapter: ModeAdapter,
    ) -> Self {
        let (temperature, top_p) = processing_mode.default_sampling();
        Self {
            config_id: config_id.into(),
            label: None,
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            processing_mode,
            temperature,
            top_p,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            mode_adapter,
            hardware_note: None,
            param_billions: None,
            delimiters: ReasoningDelimiters::default(),
            lenient_labels: false,
        }
    }

    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.config_id)
    }

    pub fn parser_options(&self) -> ParserOptions {
        ParserOptions {
            delimiters: self.delimiters.clone(),
            vocabulary: if self.lenient_labels {
                LabelVocabulary::lenient()
            } else {
                LabelVocabulary::default()
            },
        }
    }

    /// Model size in billions: explicit, or parsed from a `<number>b` token
    /// of the model id / config id (e.g. `qwen3-0.6b`, `Qwen3-30B-A3B`).
    pub fn size_billions(&self) -> Option<f64> {
        self.param_billions
            .or_else(|| parse_size(&self.model_id))
            .or_else(|| parse_size(&self.config_id))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = check_identifier(&self.config_id) {
            problems.push(format!("config_id: {e}"));
        }
        if self.model_id.trim().is_empty() {
            problems.push("model_id is empty".into());
        }
        if self.endpoint_url.trim().is_empty() {
            problems.push("endpoint_url is empty".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            problems.push(format!("temperature {} must be >= 0", self.temperature));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                problems.push(format!("top_p {p} must be in (0, 1]"));
            }
        }
        if self.max_output_tokens == 0 {
            problems.push("max_output_tokens must be positive".into());
        }
        if self.processing_mode.is_effort() && !self.mode_adapter.supports_effort() {
            problems.push(format!(
                "processing_mode {} needs an adapter with graduated effort (effort-field)",
                self.processing_mode
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(format!("config {:?}: {}", self.config_id, problems.join("; "))))
        }
    }
}

fn parse_size(id: &str) -> Option<f64> {
    id.split(|c: char| !(c.is_ascii_alphanumeric() || c == '.'))
        .filter_map(|tok| {
            let lower = tok.to_ascii_lowercase();
            let num = lower.strip_suffix('b')?;
            num.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0)
        })
        .next()
}

/// Identifiers end up in file names: letters, digits, `.`, `_`, `-`.
pub fn check_identifier(id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err("empty".into());
    }
    if id.starts_with('.') {
        return Err(format!("{id:?} may not start with '.'"));
    }
    if let Some(c) = id.chars().find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))) {
        return Err(format!("{id:?} contains {c:?}"));
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub timeout_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff_ms: 500,
            backoff_multiplier: 2.0,
            timeout_s: 120.0,
        }
    }
}

impl RetryPolicy {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.001))
    }

    /// Sleep before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.backoff_multiplier.max(1.0).powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.initial_backoff_ms as f64 / 1000.0 * factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_tokens: u32,
    pub stream: bool,
    /// Adapter-specific top-level fields.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatRequest {
    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == "system")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Builds the wire request for a config, applying its mode adapter.
pub fn build_request(config: &ModelConfig, prompt: &RenderedPrompt) -> ChatRequest {
    let mut system = prompt.system_text.clone();
    let mut extra = Map::new();
    match config.mode_adapter {
        ModeAdapter::ThinkToggle => {
            let thinking = config.processing_mode != ProcessingMode::Standard;
            system.push_str(if thinking { "\n/think" } else { "\n/no_think" });
            extra.insert("chat_template_kwargs".into(), json!({ "enable_thinking": thinking }));
        }
        ModeAdapter::EffortField => {
            if let Some(level) = config.processing_mode.effort_level() {
                extra.insert("reasoning_effort".into(), json!(level));
                extra.insert("chat_template_kwargs".into(), json!({ "reasoning_effort": level }));
            }
        }
        ModeAdapter::None => {}
    }
    ChatRequest {
        model: config.model_id.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: system,
            },
            ChatMessage {
                role: "user".into(),
                content: prompt.user_text.clone(),
            },
        ],
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_output_tokens,
        stream: false,
        extra,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// What a backend returns for one successful attempt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatCompletion {
    pub content: String,
    /// Server-separated reasoning (llama.cpp `reasoning_content`).
    pub reasoning_content: Option<String>,
    pub finish_reason: Option<String>,
    pub usage: Option<TokenUsage>,
}

impl ChatCompletion {
    /// Reads `choices[0]` of a chat-completions response body.
    pub fn from_json(body: &Value) -> Result<ChatCompletion, TransportError> {
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| TransportError::BadResponse("response has no choices[0]".into()))?;
        let message = choice
            .get("message")
            .ok_or_else(|| TransportError::BadResponse("choices[0] has no message".into()))?;
        let content = match message.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(other) => return Err(TransportError::BadResponse(format!("content is not a string: {other}"))),
        };
        let reasoning_content = message
            .get("reasoning_content")
            .or_else(|| message.get("reasoning"))
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        Ok(ChatCompletion {
            content,
            reasoning_content,
            finish_reason: choice.get("finish_reason").and_then(Value::as_str).map(str::to_string),
            usage: body.get("usage").and_then(|u| serde_json::from_value(u.clone()).ok()),
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("unusable response: {0}")]
    BadResponse(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Unreachable(_) | TransportError::Timeout => true,
            TransportError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            TransportError::BadResponse(_) => false,
        }
    }

    pub fn kind(&self) -> FailureKind {
        match self {
            TransportError::Unreachable(_) => FailureKind::TransportUnreachable,
            TransportError::HttpStatus { .. } => FailureKind::HttpStatus,
            TransportError::Timeout => FailureKind::Timeout,
            TransportError::BadResponse(_) => FailureKind::BadResponse,
        }
    }
}

/// Something that answers chat-completion requests.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<ChatCompletion, TransportError>;

    /// Identity recorded in run metadata.
    fn describe(&self) -> String;
}

/// Blocking HTTP client for `POST <base>/v1/chat/completions`.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint_url: &str, api_key: Option<String>) -> Self {
        Self {
            url: completions_url(endpoint_url),
            api_key: api_key.filter(|k| !k.is_empty()),
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// `http://host:port` → `http://host:port/v1/chat/completions`; a URL
/// already ending in `/v1` or `/chat/completions` is extended or kept.
pub fn completions_url(endpoint_url: &str) -> String {
    let base = endpoint_url.trim().trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<ChatCompletion, TransportError> {
        let mut req = self
            .agent
            .post(&self.url)
            .timeout(timeout)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(request).expect("request serializes");
        match req.send_json(body) {
            Ok(resp) => {
                let text = resp.into_string().map_err(|e| classify_io(&e))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| TransportError::BadResponse(format!("body is not JSON: {e}")))?;
                ChatCompletion::from_json(&value)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                Err(TransportError::HttpStatus {
                    status,
                    body: body.chars().take(500).collect(),
                })
            }
            Err(ureq::Error::Transport(t)) => Err(classify_transport(&t)),
        }
    }

    fn describe(&self) -> String {
        format!("http {}", self.url)
    }
}

fn classify_io(e: &std::io::Error) -> TransportError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout,
        _ => TransportError::Unreachable(e.to_string()),
    }
}

fn classify_transport(t: &ureq::Transport) -> TransportError {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return TransportError::Timeout;
            }
        }
        source = err.source();
    }
    let text = t.to_string();
    if text.contains("timed out") {
        TransportError::Timeout
    } else {
        TransportError::Unreachable(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResponse {
    /// Model output; server-separated reasoning is re-wrapped in the
    /// config's delimiters in front of the content.
    pub raw_text: String,
    pub latency_seconds: f64,
    pub attempt_count: u32,
    pub token_usage: Option<TokenUsage>,
    /// The server stopped at the token cap.
    pub truncated: bool,
}

/// A case the gateway could not get a response for.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceFailure {
    pub error: TransportError,
    pub attempt_count: u32,
    pub latency_seconds: f64,
}

/// Sends one prompt, retrying transient failures with exponential backoff.
pub fn classify_case(
    backend: &dyn Backend,
    config: &ModelConfig,
    prompt: &RenderedPrompt,
    retry: &RetryPolicy,
) -> Result<InferenceResponse, InferenceFailure> {
    let request = build_request(config, prompt);
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let started = Instant::now();
        let outcome = backend.complete(&request, retry.timeout());
        let latency_seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok(completion) => {
                let truncated = completion.finish_reason.as_deref() == Some("length");
                let raw_text = match &completion.reasoning_content {
                    Some(r) => format!(
                        "{}{}{}{}",
                        config.delimiters.open, r, config.delimiters.close, completion.content
                    ),
                    None => completion.content,
                };
                return Ok(InferenceResponse {
                    raw_text,
                    latency_seconds,
                    attempt_count: attempt,
                    token_usage: completion.usage,
                    truncated,
                });
            }
            Err(error) => {
                if !error.is_retryable() || attempt > retry.max_retries {
                    return Err(InferenceFailure {
                        error,
                        attempt_count: attempt,
                        latency_seconds,
                    });
                }
                thread::sleep(retry.backoff(attempt));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn prompt() -> RenderedPrompt {
        RenderedPrompt {
            system_text: "Classify.".into(),
            user_text: "Summary: nothing notable.".into(),
        }
    }

    #[test]
    fn mode_defaults() {
        let s = ModelConfig::new("a", "http://x", "qwen3-4b", ProcessingMode::Standard, ModeAdapter::ThinkToggle);
        assert_eq!((s.temperature, s.top_p, s.max_output_tokens), (0.2, Some(0.8), 2048));
        let r = ModelConfig::new("a", "http://x", "qwen3-4b", ProcessingMode::Reasoning, ModeAdapter::ThinkToggle);
        assert_eq!((r.temperature, r.top_p, r.max_output_tokens), (0.2, Some(0.95), 2048));
        let e = ModelConfig::new("g", "http://x", "gpt-oss-20b", ProcessingMode::EffortHigh, ModeAdapter::EffortField);
        assert_eq!((e.temperature, e.top_p), (0.2, None));
    }

    #[test]
    fn effort_needs_effort_adapter() {
        let bad = ModelConfig::new("g", "http://x", "gpt-oss-20b", ProcessingMode::EffortLow, ModeAdapter::ThinkToggle);
        assert!(bad.validate().unwrap_err().0.contains("effort-field"));
        let mut bad = ModelConfig::new("g/x", "http://x", "m", ProcessingMode::Standard, ModeAdapter::None);
        bad.top_p = Some(0.0);
        let msg = bad.validate().unwrap_err().0;
        assert!(msg.contains("config_id") && msg.contains("top_p"), "{msg}");
    }

    #[test]
    fn adapters_shape_the_request() {
        let p = prompt();
        let s = ModelConfig::new("a", "u", "qwen3-4b", ProcessingMode::Standard, ModeAdapter::ThinkToggle);
        let req = build_request(&s, &p);
        assert!(req.system_text().ends_with("/no_think"));
        assert_eq!(req.extra["chat_template_kwargs"]["enable_thinking"], json!(false));
        let body = serde_json::to_value(&req).unwrap();
        assert_eq!(body["max_tokens"], json!(2048));
        assert_eq!(body["stream"], json!(false));
        assert_eq!(body["messages"][1]["content"], json!(p.user_text));

        let r = ModelConfig::new("a", "u", "qwen3-4b", ProcessingMode::Reasoning, ModeAdapter::ThinkToggle);
        assert!(build_request(&r, &p).system_text().ends_with("/think"));

        let g = ModelConfig::new("g", "u", "gpt-oss-20b", ProcessingMode::EffortMedium, ModeAdapter::EffortField);
        let body = serde_json::to_value(build_request(&g, &p)).unwrap();
        assert_eq!(body["reasoning_effort"], json!("medium"));
        assert!(body.get("top_p").is_none());

        let n = ModelConfig::new("n", "u", "m", ProcessingMode::Reasoning, ModeAdapter::None);
        let req = build_request(&n, &p);
        assert!(req.extra.is_empty());
        assert_eq!(req.system_text(), p.system_text);
    }

    #[test]
    fn size_parsing() {
        let mut c = ModelConfig::new("q-s", "u", "Qwen3-0.6B", ProcessingMode::Standard, ModeAdapter::None);
        assert_eq!(c.size_billions(), Some(0.6));
        c.model_id = "Qwen3-30B-A3B".into();
        assert_eq!(c.size_billions(), Some(30.0));
        c.model_id = "gpt-oss-20b".into();
        assert_eq!(c.size_billions(), Some(20.0));
        c.model_id = "mystery".into();
        assert_eq!(c.size_billions(), None);
        c.param_billions = Some(21.0);
        assert_eq!(c.size_billions(), Some(21.0));
    }

    #[test]
    fn url_building() {
        assert_eq!(completions_url("http://127.0.0.1:8080"), "http://127.0.0.1:8080/v1/chat/completions");
        assert_eq!(completions_url("http://h/v1/"), "http://h/v1/chat/completions");
        assert_eq!(completions_url("http://h/v1/chat/completions"), "http://h/v1/chat/completions");
    }

    #[test]
    fn completion_parsing() {
        let body = json!({
            "choices": [{"message": {"content": "{\"label\":\"absent\"}", "reasoning_content": "hmm"},
                         "finish_reason": "length"}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 2048}
        });
        let c = ChatCompletion::from_json(&body).unwrap();
        assert_eq!(c.reasoning_content.as_deref(), Some("hmm"));
        assert_eq!(c.usage.unwrap().completion_tokens, 2048);
        assert!(matches!(ChatCompletion::from_json(&json!({})), Err(TransportError::BadResponse(_))));
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: TransportError,
    }

    impl Backend for Flaky {
        fn complete(&self, _: &ChatRequest, _: Duration) -> Result<ChatCompletion, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(ChatCompletion {
                    content: "{\"label\":\"present\"}".into(),
                    reasoning_content: Some("because".into()),
                    finish_reason: Some("stop".into()),
                    usage: None,
                })
            }
        }

        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            initial_backoff_ms: 1,
            ..RetryPolicy::default()
        }
    }

    #[test]
    fn retries_transient_failures() {
        let cfg = ModelConfig::new("a", "u", "m", ProcessingMode::Reasoning, ModeAdapter::None);
        let backend = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
            error: TransportError::HttpStatus { status: 503, body: String::new() },
        };
        let r = classify_case(&backend, &cfg, &prompt(), &fast_retry()).unwrap();
        assert_eq!(r.attempt_count, 3);
        assert_eq!(r.raw_text, "<think>because</think>{\"label\":\"present\"}");
        assert!(!r.truncated);

        let backend = Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
            error: TransportError::Timeout,
        };
        let f = classify_case(&backend, &cfg, &prompt(), &fast_retry()).unwrap_err();
        assert_eq!((f.attempt_count, f.error), (3, TransportError::Timeout));

        let backend = Flaky {
            failures: 1,
            calls: AtomicU32::new(0),
            error: TransportError::HttpStatus { status: 400, body: "bad".into() },
        };
        let f = classify_case(&backend, &cfg, &prompt(), &fast_retry()).unwrap_err();
        assert_eq!(f.attempt_count, 1);
    }

    #[test]
    fn backoff_grows() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }

    #[test]
    fn dead_endpoint_is_unreachable() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let backend = HttpBackend::new(&format!("http://127.0.0.1:{port}"), None);
        let cfg = ModelConfig::new("a", "u", "m", ProcessingMode::Standard, ModeAdapter::None);
        let policy = RetryPolicy {
            max_retries: 1,
            initial_backoff_ms: 1,
            ..RetryPolicy::default()
        };
        let f = classify_case(&backend, &cfg, &prompt(), &policy).unwrap_err();
        assert_eq!(f.attempt_count, 2);
        assert_eq!(f.error.kind(), FailureKind::TransportUnreachable);
    }
}
