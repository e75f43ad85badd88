//! Deterministic stand-in for the model server, speaking the same wire
//! protocol on a loopback port. Used by the offline test suites and by
//! `acewgs mock-llm` for demos.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use super::{EmbeddingsRequest, GenerateRequest, LlmError};

pub const ECHO_PREFIX: &str = "ECHO: ";
pub const DEFAULT_MOCK_DIM: usize = 256;

/// Pattern -> response. `*` matches every prompt; anything else matches
/// when the prompt contains it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "text")]
pub enum MockFallback {
    /// Reply with `ECHO: <prompt>`.
    Echo,
    Canned(String),
    /// Reply with HTTP 500.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub fallback: MockFallback,
    /// Models the server will accept. Empty means any.
    pub known_models: Vec<String>,
    pub embedding_dim: usize,
}

impl Default for MockScript {
    fn default() -> Self {
        Self::echo()
    }
}

impl MockScript {
    pub fn echo() -> Self {
        Self { rules: Vec::new(), fallback: MockFallback::Echo, known_models: Vec::new(), embedding_dim: DEFAULT_MOCK_DIM }
    }

    pub fn canned(text: impl Into<String>) -> Self {
        Self { rules: vec![MockRule { pattern: "*".into(), response: text.into() }], ..Self::echo() }
    }

    /// Appends a rule; earlier rules win.
    pub fn with_rule(mut self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule { pattern: pattern.into(), response: response.into() });
        self
    }

    /// Parses a tab-separated `question<TAB>response` file. Blank lines and
    /// `#` comments are skipped.
    pub fn parse_pairs(text: &str) -> Vec<MockRule> {
        text.lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .filter_map(|l| {
                let (pattern, response) = l.split_once('\t')?;
                Some(MockRule { pattern: pattern.trim().into(), response: response.trim().into() })
            })
            .collect()
    }

    /// Scripted-DSL mode: responses come from a prompt->DSL fixture file;
    /// unmatched prompts are echoed.
    pub fn from_pairs_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self { rules: Self::parse_pairs(&text), ..Self::echo() })
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        for rule in &self.rules {
            if rule.pattern == "*" || prompt.contains(&rule.pattern) {
                return Some(rule.response.clone());
            }
        }
        match &self.fallback {
            MockFallback::Echo => Some(format!("{ECHO_PREFIX}{prompt}")),
            MockFallback::Canned(text) => Some(text.clone()),
            MockFallback::Fail => None,
        }
    }

    fn accepts(&self, model: &str) -> bool {
        self.known_models.is_empty() || self.known_models.iter().any(|m| m == model)
    }
}

/// One request the mock has served, for assertions on prompt content.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordedRequest {
    Generate(GenerateRequest),
    Embeddings(EmbeddingsRequest),
}

struct Shared {
    script: Mutex<MockScript>,
    log: Mutex<Vec<RecordedRequest>>,
}

/// A running mock backend. Dropping it shuts the server down.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:<port>` (0 picks a free port) and starts serving.
    pub async fn start(script: MockScript, port: u16) -> Result<Self, LlmError> {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| LlmError::PortUnavailable(format!("127.0.0.1:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| LlmError::PortUnavailable(e.to_string()))?;
        let shared = Arc::new(Shared { script: Mutex::new(script), log: Mutex::new(Vec::new()) });
        let app = router(shared.clone());
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self { addr, shared, shutdown: Some(tx) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    /// Prompts of all generate calls so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.requests()
            .into_iter()
            .filter_map(|r| match r {
                RecordedRequest::Generate(g) => Some(g.prompt),
                RecordedRequest::Embeddings(_) => None,
            })
            .collect()
    }

    pub fn clear_log(&self) {
        self.shared.log.lock().unwrap().clear();
    }

    pub fn set_script(&self, script: MockScript) {
        *self.shared.script.lock().unwrap() = script;
    }

    pub fn set_embedding_dim(&self, dim: usize) {
        self.shared.script.lock().unwrap().embedding_dim = dim;
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/api/generate", post(generate))
        .route("/api/embeddings", post(embeddings))
        .route("/api/tags", get(tags))
        .with_state(shared)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn generate(State(shared): State<Arc<Shared>>, Json(req): Json<GenerateRequest>) -> Response {
    shared.log.lock().unwrap().push(RecordedRequest::Generate(req.clone()));
    let script = shared.script.lock().unwrap().clone();
    if !script.accepts(&req.model) {
        return error(StatusCode::NOT_FOUND, format!("model '{}' not found", req.model));
    }
    match script.respond(&req.prompt) {
        Some(text) => Json(json!({ "model": req.model, "response": text, "done": true })).into_response(),
        None => error(StatusCode::INTERNAL_SERVER_ERROR, "scripted failure"),
    }
}

async fn embeddings(State(shared): State<Arc<Shared>>, Json(req): Json<EmbeddingsRequest>) -> Response {
    shared.log.lock().unwrap().push(RecordedRequest::Embeddings(req.clone()));
    let script = shared.script.lock().unwrap().clone();
    if !script.accepts(&req.model) {
        return error(StatusCode::NOT_FOUND, format!("model '{}' not found", req.model));
    }
    let v: Vec<f64> = mock_embedding(&req.prompt, script.embedding_dim).into_iter().map(f64::from).collect();
    Json(json!({ "embedding": v })).into_response()
}

async fn tags(State(shared): State<Arc<Shared>>) -> Response {
    let script = shared.script.lock().unwrap().clone();
    let models: Vec<_> = script.known_models.iter().map(|m| json!({ "name": m })).collect();
    Json(json!({ "models": models })).into_response()
}

/// 64-bit FNV-1a. Stable across processes and platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn seeded_direction(seed: u64, dim: usize, acc: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in acc.iter_mut().take(dim) {
        *slot += rng.random_range(-1.0..1.0);
    }
}

/// Deterministic unit-norm embedding: the sum of one PRNG direction per
/// lower-cased word, each seeded by the word's byte hash. Texts sharing
/// words therefore land near each other. Text without any word falls back
/// to a direction seeded by the whole string.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f32> {
    let dim = dim.max(1);
    let mut acc = vec![0.0f64; dim];
    let mut any = false;
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        seeded_direction(fnv1a(word.to_lowercase().as_bytes()), dim, &mut acc);
        any = true;
    }
    if !any {
        seeded_direction(fnv1a(text.as_bytes()), dim, &mut acc);
    }
    let mut norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        acc[0] = 1.0;
        norm = 1.0;
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}
