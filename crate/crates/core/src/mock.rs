//! Deterministic stand-in for an inference server.
//!
//! For every request the mock finds the case narrative in the user message
//! (the longest known case text it contains), then answers with the gold
//! label, the flipped label with probability `flip_probability`, or
//! malformed text with probability `malformed_probability`. All draws come
//! from a generator keyed by `(seed, model, system text, case text)`, so an
//! answer does not depend on request order, concurrency or restarts.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{BenchmarkManifest, Label};
use crate::gateway::{Backend, ChatCompletion, ChatRequest, TokenUsage, TransportError};
use crate::rng::{derive_seed, seeded_rng, unit_f64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { seconds: f64 },
    /// Normal(mean, sd) truncated at 0.
    Normal { mean_s: f64, sd_s: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { seconds: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(default)]
    pub flip_probability: f64,
    #[serde(default)]
    pub malformed_probability: f64,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub reasoning_trace: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MockSpec {
    fn default() -> Self {
        Self {
            flip_probability: 0.0,
            malformed_probability: 0.0,
            latency: LatencyModel::default(),
            reasoning_trace: false,
            seed: 0,
        }
    }
}

impl MockSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("flip_probability", self.flip_probability),
            ("malformed_probability", self.malformed_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} {p} outside [0, 1]"));
            }
        }
        match self.latency {
            LatencyModel::Fixed { seconds } if !(seconds.is_finite() && seconds >= 0.0) => {
                Err(format!("fixed latency {seconds} must be >= 0"))
            }
            LatencyModel::Normal { mean_s, sd_s } if !(mean_s.is_finite() && sd_s.is_finite() && sd_s >= 0.0) => {
                Err(format!("normal latency ({mean_s}, {sd_s}) is invalid"))
            }
            _ => Ok(()),
        }
    }
}

/// What the mock decided for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub content: String,
    pub delay_seconds: f64,
    /// `None` when the case text was not recognised.
    pub gold: Option<Label>,
    pub flipped: bool,
    pub malformed: bool,
}

/// Answers keyed by case text.
#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockSpec,
    gold: HashMap<String, Label>,
    /// Known texts, longest first, for substring lookup.
    texts: Vec<String>,
    injected: Arc<Mutex<Vec<f64>>>,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        Self {
            spec,
            gold: HashMap::new(),
            texts: Vec::new(),
            injected: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn with_manifests<'a>(spec: MockSpec, manifests: impl IntoIterator<Item = &'a BenchmarkManifest>) -> Self {
        let mut mock = Self::new(spec);
        for m in manifests {
            for case in &m.cases {
                mock.add_case(&case.text, case.gold_label);
            }
        }
        mock
    }

    pub fn add_case(&mut self, text: &str, gold: Label) {
        if self.gold.insert(text.to_string(), gold).is_none() {
            let at = self.texts.partition_point(|t| t.len() >= text.len());
            self.texts.insert(at, text.to_string());
        }
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    /// Delays chosen so far, in call order.
    pub fn injected_delays(&self) -> Vec<f64> {
        self.injected.lock().expect("delay log").clone()
    }

    fn lookup<'a>(&'a self, user_text: &'a str) -> Option<(&'a str, Label)> {
        if let Some(label) = self.gold.get(user_text) {
            return Some((user_text, *label));
        }
        self.texts
            .iter()
            .find(|t| user_text.contains(t.as_str()))
            .map(|t| (t.as_str(), self.gold[t]))
    }

    /// Pure decision for a request; does not sleep or log.
    pub fn reply(&self, request: &ChatRequest) -> MockReply {
        let user = request.user_text();
        let found = self.lookup(user);
        let key_text = found.map(|(t, _)| t).unwrap_or(user);
        let mut rng = seeded_rng(derive_seed(
            self.spec.seed,
            &[&request.model, request.system_text(), key_text],
        ));
        let u_malformed = unit_f64(&mut rng);
        let u_flip = unit_f64(&mut rng);
        let u_unknown = unit_f64(&mut rng);
        let delay_seconds = match self.spec.latency {
            LatencyModel::Fixed { seconds } => seconds,
            LatencyModel::Normal { mean_s, sd_s } => {
                // Box-Muller on two fresh uniforms; 1 - u keeps ln away from 0
                let u1 = 1.0 - unit_f64(&mut rng);
                let u2 = unit_f64(&mut rng);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (mean_s + sd_s * z).max(0.0)
            }
        };

        let gold = found.map(|(_, l)| l);
        let malformed = u_malformed < self.spec.malformed_probability;
        let flipped = !malformed && gold.is_some() && u_flip < self.spec.flip_probability;
        let answer = match gold {
            Some(l) if flipped => l.flipped(),
            Some(l) => l,
            None if u_unknown < 0.5 => Label::Positive,
            None => Label::Negative,
        };
        let mut content = String::new();
        if self.spec.reasoning_trace {
            content.push_str("<think>\nChecking the summary against the operational definition.\n</think>\n\n");
        }
        if malformed {
            content.push_str("I could not reach a decision {label: undecided");
        } else {
            let token = match answer {
                Label::Positive => "present",
                Label::Negative => "absent",
            };
            content.push_str(&format!("{{\"label\": \"{token}\"}}"));
        }
        MockReply {
            content,
            delay_seconds,
            gold,
            flipped,
            malformed,
        }
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<ChatCompletion, TransportError> {
        let reply = self.reply(request);
        self.injected.lock().expect("delay log").push(reply.delay_seconds);
        let delay = Duration::from_secs_f64(reply.delay_seconds);
        if delay > timeout {
            thread::sleep(timeout);
            return Err(TransportError::Timeout);
        }
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        Ok(ChatCompletion {
            content: reply.content,
            reasoning_content: None,
            finish_reason: Some("stop".into()),
            usage: Some(TokenUsage {
                prompt_tokens: (request.user_text().len() / 4) as u64,
                completion_tokens: 8,
            }),
        })
    }

    fn describe(&self) -> String {
        format!(
            "mock flip={} malformed={} seed={}",
            self.spec.flip_probability, self.spec.malformed_probability, self.spec.seed
        )
    }
}

/// The mock served over loopback HTTP with the chat-completions surface.
pub struct MockServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and serves until dropped.
    pub fn start(addr: &str, backend: MockBackend) -> std::io::Result<MockServer> {
        let server = tiny_http::Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server is not on an IP socket"))?;
        let server = Arc::new(server);
        let backend = Arc::new(backend);
        let accept = Arc::clone(&server);
        let handle = thread::spawn(move || {
            for request in accept.incoming_requests() {
                let backend = Arc::clone(&backend);
                thread::spawn(move || handle_request(request, &backend));
            }
        });
        Ok(MockServer {
            addr,
            server,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is shut down from elsewhere.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn respond_json(request: tiny_http::Request, status: u16, body: serde_json::Value) {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn handle_request(mut request: tiny_http::Request, backend: &MockBackend) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    match (request.method(), path.as_str()) {
        (tiny_http::Method::Get, "/health") => respond_json(request, 200, json!({"status": "ok"})),
        (tiny_http::Method::Get, "/v1/models") => {
            respond_json(request, 200, json!({"object": "list", "data": [{"id": "mock", "object": "model"}]}))
        }
        (tiny_http::Method::Post, p) if p.ends_with("/chat/completions") => {
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                return respond_json(request, 400, json!({"error": {"message": "unreadable body"}}));
            }
            let chat: ChatRequest = match serde_json::from_str(&body) {
                Ok(c) => c,
                Err(e) => {
                    return respond_json(request, 400, json!({"error": {"message": e.to_string()}}));
                }
            };
            match backend.complete(&chat, Duration::from_secs(3600)) {
                Ok(c) => respond_json(
                    request,
                    200,
                    json!({
                        "id": "chatcmpl-mock",
                        "object": "chat.completion",
                        "model": chat.model,
                        "choices": [{
                            "index": 0,
                            "message": {"role": "assistant", "content": c.content},
                            "finish_reason": c.finish_reason,
                        }],
                        "usage": c.usage.map(|u| json!({
                            "prompt_tokens": u.prompt_tokens,
                            "completion_tokens": u.completion_tokens,
                            "total_tokens": u.prompt_tokens + u.completion_tokens,
                        })),
                    }),
                ),
                Err(e) => respond_json(request, 500, json!({"error": {"message": e.to_string()}})),
            }
        }
        _ => respond_json(request, 404, json!({"error": {"message": format!("no route for {path}")}})),
    }
}
