//! Client for the local model server: text generation and embeddings over
//! JSON/HTTP.
//!
//! Wire protocol:
//!
//! ```text
//! POST {base}/api/generate   {model, prompt, stream:false, options:{temperature, top_k, top_p}}
//!                            -> {response}
//! POST {base}/api/embeddings {model, prompt} -> {embedding: [f64]}
//! GET  {base}/api/tags       -> {models: [{name}]}
//! ```

pub mod mock;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use mock::{mock_embedding, MockFallback, MockRule, MockScript, MockServer, RecordedRequest};

pub const LLM_URL_ENV: &str = "ACEWGS_LLM_URL";

#[derive(Debug, Clone, thiserror::Error)]
pub enum LlmError {
    #[error("cannot reach model server: {0}")]
    ConnectionFailed(String),
    #[error("model server does not know model `{0}`")]
    ModelNotFound(String),
    #[error("malformed response from model server: {0}")]
    MalformedResponse(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("embedding dimension changed for model `{model}`: expected {expected}, got {got}")]
    DimensionMismatch { model: String, expected: usize, got: usize },
    #[error("model server returned HTTP {status}: {message}")]
    Backend { status: u16, message: String },
    #[error("invalid llm configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot bind mock backend: {0}")]
    PortUnavailable(String),
}

/// Connection and sampling settings for one model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub base_url: String,
    /// Embedding requests go here when set; otherwise to `base_url`.
    pub embed_base_url: Option<String>,
    #[serde(rename = "model")]
    pub model_name: String,
    pub embed_model: String,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434".into(),
            embed_base_url: None,
            model_name: "gemma2".into(),
            embed_model: "mxbai-embed-large".into(),
            temperature: 0.0,
            top_k: 10,
            top_p: 0.5,
            timeout_secs: 120.0,
            max_retries: 2,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.base_url.trim().is_empty() {
            return Err(LlmError::InvalidConfig("base_url is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidConfig(format!("temperature {} < 0", self.temperature)));
        }
        if self.top_k < 1 {
            return Err(LlmError::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidConfig(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }

    /// Applies `ACEWGS_LLM_URL` if set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(LLM_URL_ENV) {
            if !url.trim().is_empty() {
                self.base_url = url;
            }
        }
        self
    }

    pub fn sampling_options(&self) -> SamplingOptions {
        SamplingOptions { temperature: self.temperature, top_k: self.top_k, top_p: self.top_p }
    }

    fn embed_base(&self) -> &str {
        self.embed_base_url.as_deref().unwrap_or(&self.base_url)
    }
}

/// Exactly the three sampling knobs sent with every generate call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingOptions {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub prompt: String,
    pub stream: bool,
    pub options: SamplingOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsRequest {
    pub model: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub model_name: String,
    pub latency_ms: u64,
}

/// A fixed-length embedding. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, LlmError> {
        if values.is_empty() {
            return Err(LlmError::MalformedResponse("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LlmError::MalformedResponse("non-finite embedding entry".into()));
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Anything that can answer prompts and embed text.
#[async_trait]
pub trait LanguageModel: Send + Sync {
    async fn generate(&self, prompt: &str) -> Result<GenerationResult, LlmError>;
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError>;
    async fn health(&self) -> Result<(), LlmError>;
    fn model_name(&self) -> &str;
}

/// HTTP client for the local model server. Cheap to share behind an `Arc`.
pub struct LlmClient {
    config: LlmConfig,
    http: reqwest::Client,
    observed_dims: Mutex<HashMap<String, usize>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish()
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    response: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    embedding: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: Option<String>,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .no_proxy()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, http, observed_dims: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn generate_request(&self, prompt: &str) -> GenerateRequest {
        GenerateRequest {
            model: self.config.model_name.clone(),
            prompt: prompt.to_string(),
            stream: false,
            options: self.config.sampling_options(),
        }
    }

    /// POSTs `body` and decodes the JSON reply, retrying only when the
    /// server could not be reached.
    async fn post_json<B: Serialize, R: serde::de::DeserializeOwned>(
        &self,
        url: &str,
        model: &str,
        body: &B,
    ) -> Result<R, LlmError> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, model, body).await {
                Err(LlmError::ConnectionFailed(msg)) if attempt < self.config.max_retries => {
                    attempt += 1;
                    tracing::warn!(url, attempt, "model server unreachable, retrying: {msg}");
                    tokio::time::sleep(Duration::from_millis(50 * u64::from(attempt))).await;
                }
                other => return other,
            }
        }
    }

    async fn post_once<B: Serialize, R: serde::de::DeserializeOwned>(
        &self,
        url: &str,
        model: &str,
        body: &B,
    ) -> Result<R, LlmError> {
        let resp = self.http.post(url).json(body).send().await.map_err(|e| LlmError::ConnectionFailed(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| LlmError::ConnectionFailed(e.to_string()))?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .ok()
                .and_then(|b| b.error)
                .unwrap_or_else(|| String::from_utf8_lossy(&bytes).into_owned());
            if status == reqwest::StatusCode::NOT_FOUND && message.contains("not found") {
                return Err(LlmError::ModelNotFound(model.to_string()));
            }
            return Err(LlmError::Backend { status: status.as_u16(), message });
        }
        serde_json::from_slice(&bytes).map_err(|e| LlmError::MalformedResponse(e.to_string()))
    }
}

#[async_trait]
impl LanguageModel for LlmClient {
    async fn generate(&self, prompt: &str) -> Result<GenerationResult, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let started = Instant::now();
        let url = format!("{}/api/generate", self.config.base_url.trim_end_matches('/'));
        let body = self.generate_request(prompt);
        let resp: GenerateResponse = self.post_json(&url, &self.config.model_name, &body).await?;
        let text = resp.response.ok_or_else(|| LlmError::MalformedResponse("missing `response` field".into()))?;
        Ok(GenerationResult {
            text,
            model_name: self.config.model_name.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let url = format!("{}/api/embeddings", self.config.embed_base().trim_end_matches('/'));
        let body = EmbeddingsRequest { model: self.config.embed_model.clone(), prompt: text.to_string() };
        let resp: EmbeddingsResponse = self.post_json(&url, &self.config.embed_model, &body).await?;
        let values = resp.embedding.ok_or_else(|| LlmError::MalformedResponse("missing `embedding` field".into()))?;
        let vector = EmbeddingVector::new(values.into_iter().map(|v| v as f32).collect())?;

        let mut dims = self.observed_dims.lock().expect("dimension table poisoned");
        match dims.get(&self.config.embed_model) {
            Some(&expected) if expected != vector.dimension() => Err(LlmError::DimensionMismatch {
                model: self.config.embed_model.clone(),
                expected,
                got: vector.dimension(),
            }),
            Some(_) => Ok(vector),
            None => {
                dims.insert(self.config.embed_model.clone(), vector.dimension());
                Ok(vector)
            }
        }
    }

    async fn health(&self) -> Result<(), LlmError> {
        let url = format!("{}/api/tags", self.config.base_url.trim_end_matches('/'));
        let resp = self.http.get(url).send().await.map_err(|e| LlmError::ConnectionFailed(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(LlmError::Backend { status: resp.status().as_u16(), message: "health probe failed".into() })
        }
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

