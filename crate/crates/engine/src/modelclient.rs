//! Chat-completions access for both roles.
//!
//! Requests follow the OpenAI wire format. Frames travel as `image_url`
//! parts in the order they appear in the `VideoRef`, each URL carrying its
//! canonical index and timestamp in the fragment (`#idx=3&ts=1.5`). A
//! request is a pure function of its inputs, so identical inputs produce
//! byte-identical bodies.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use evoforge_core::seed::fork_seed;
use evoforge_core::{PipelineConfig, VideoRef};
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const QUESTIONER_PROMPT: &str = "You are an intelligent Question Generator. Your task is to create a question based on the given video.
Requirements (must follow exactly):
1. Watch the video carefully and understand all details across the frames.
2. Generate exactly one question that is directly related to the video content.
3. Choose the question type from only one of: multiple choice (Yes/No or four options A/B/C/D, one correct), numerical (a specific numeric answer), or regression (a continuous value such as a measurement, quantity, or coordinate).
4. The question must require analysis or reasoning, not just description.
5. Provide the correct answer. Include units if applicable.
6. Output strictly in the three-block format below, with nothing else.
Output format:
<type>X</type>
<question>Y</question>
<answer>Z</answer>
where X \u{2208} {multiple choice, numerical, regression}.";

/// Appended to the question text to form the Solver prompt.
pub const SOLVER_INSTRUCTION: &str = " Please reason step by step based on the question and video, and put your final answer within \\boxed{}. Additionally, predict the video time segment (in seconds) that is most relevant to answering this question and output it as <segment>Xs--Ys</segment> (e.g. <segment>2.5s--5.0s</segment>).";

/// Decoding settings used for evaluation-style sampling.
pub const EVAL_TEMPERATURE: f64 = 0.01;
pub const EVAL_TOP_P: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    ImageUrl { image_url: ImageUrl },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Frame attachments of the first message, in order.
    pub fn attachments(&self) -> Vec<&str> {
        self.messages
            .iter()
            .flat_map(|m| m.content.iter())
            .filter_map(|part| match part {
                ContentPart::ImageUrl { image_url } => Some(image_url.url.as_str()),
                ContentPart::Text { .. } => None,
            })
            .collect()
    }

    /// Concatenated text parts.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| m.content.iter())
            .filter_map(|part| match part {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat request serializes")
    }
}

/// URL for one frame attachment, with order metadata in the fragment.
pub fn frame_url(uri: &str, index: usize, timestamp_s: f64) -> String {
    format!("{uri}#idx={index}&ts={timestamp_s}")
}

/// Reads `(index, timestamp)` back out of a frame URL.
pub fn parse_frame_url(url: &str) -> Option<(usize, f64)> {
    let (_, fragment) = url.rsplit_once('#')?;
    let mut index = None;
    let mut ts = None;
    for pair in fragment.split('&') {
        match pair.split_once('=')? {
            ("idx", v) => index = v.parse().ok(),
            ("ts", v) => ts = v.parse::<f64>().ok().filter(|t| t.is_finite()),
            _ => {}
        }
    }
    Some((index?, ts?))
}

fn user_message(video: &VideoRef, text: String) -> ChatMessage {
    let mut content: Vec<ContentPart> = video
        .frames
        .iter()
        .map(|f| ContentPart::ImageUrl {
            image_url: ImageUrl {
                url: frame_url(&f.uri, f.index, f.timestamp_s),
            },
        })
        .collect();
    content.push(ContentPart::Text { text });
    ChatMessage {
        role: "user".into(),
        content,
    }
}

/// Questioner request over the frames as given (full video, clip, or
/// shuffled video).
pub fn build_questioner_request(video: &VideoRef, endpoint: &EndpointConfig) -> ChatRequest {
    endpoint.request(vec![user_message(video, QUESTIONER_PROMPT.to_string())])
}

pub fn solver_prompt(question: &str) -> String {
    format!("{question}{SOLVER_INSTRUCTION}")
}

/// Solver request. Callers pass the full canonical video, or its permuted
/// copy for the shuffled-confidence pass.
pub fn build_solver_request(video: &VideoRef, question: &str, endpoint: &EndpointConfig) -> ChatRequest {
    endpoint.request(vec![user_message(video, solver_prompt(question))])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: Option<u32>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_in_flight: 16,
            max_retries: 2,
            retry_backoff: Duration::from_millis(250),
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: None,
        }
    }

    fn from_pipeline(cfg: &PipelineConfig, base_url: &str, model: &str, api_key: Option<String>) -> Self {
        Self {
            api_key,
            timeout: Duration::from_secs_f64(cfg.timeout_s),
            max_in_flight: cfg.max_in_flight,
            max_retries: cfg.max_retries,
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_tokens,
            ..Self::new(base_url, model)
        }
    }

    pub fn questioner(cfg: &PipelineConfig, api_key: Option<String>) -> Self {
        Self::from_pipeline(cfg, &cfg.questioner_base_url, &cfg.questioner_model, api_key)
    }

    pub fn solver(cfg: &PipelineConfig, api_key: Option<String>) -> Self {
        Self::from_pipeline(cfg, &cfg.solver_base_url, &cfg.solver_model, api_key)
    }

    /// Near-greedy decoding used for evaluation.
    pub fn with_eval_decoding(mut self) -> Self {
        self.temperature = EVAL_TEMPERATURE;
        self.top_p = EVAL_TOP_P;
        self
    }

    fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model_name.clone(),
            messages,
            temperature: self.temperature,
            top_p: self.top_p,
            n: 1,
            seed: None,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, 5xx, 429, malformed bodies.
    #[error("transient: {0}")]
    Transient(String),
    /// The endpoint cannot be reached at all.
    #[error("unreachable: {0}")]
    Unreachable(String),
    /// The endpoint refused the request; retrying will not help.
    #[error("rejected: {0}")]
    Rejected(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Returns the first choice's message content.
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible HTTP backend.
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Rejected(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: config.api_key.clone(),
        })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| {
            if e.is_connect() {
                BackendError::Unreachable(e.to_string())
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(BackendError::Rejected(format!("HTTP {status}: {body}")));
        }
        let body: WireResponse = response
            .json()
            .await
            .map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| BackendError::Transient("response has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("endpoint {url} unreachable: {reason}")]
    EndpointUnreachable { url: String, reason: String },
    #[error("endpoint {url} rejected the request: {reason}")]
    Rejected { url: String, reason: String },
}

/// A backend plus the in-flight bound shared by everything that samples
/// from it.
#[derive(Clone)]
pub struct Endpoint {
    pub config: EndpointConfig,
    backend: Arc<dyn ChatBackend>,
    permits: Arc<Semaphore>,
}

impl Endpoint {
    pub fn new(config: EndpointConfig, backend: Arc<dyn ChatBackend>) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Self {
            config,
            backend,
            permits,
        }
    }

    pub fn http(config: EndpointConfig) -> Result<Self, BackendError> {
        let backend = Arc::new(HttpBackend::new(&config)?);
        Ok(Self::new(config, backend))
    }

    async fn sample_once(&self, request: ChatRequest) -> Result<String, EndpointError> {
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.backend.complete(&request).await
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(BackendError::Unreachable(reason)) => {
                    return Err(EndpointError::EndpointUnreachable {
                        url: self.config.base_url.clone(),
                        reason,
                    })
                }
                Err(BackendError::Rejected(reason)) => {
                    return Err(EndpointError::Rejected {
                        url: self.config.base_url.clone(),
                        reason,
                    })
                }
                Err(BackendError::Transient(reason)) => {
                    tracing::debug!(attempt, %reason, "sample failed");
                    if attempt + 1 < attempts && !self.config.retry_backoff.is_zero() {
                        tokio::time::sleep(self.config.retry_backoff * (attempt + 1)).await;
                    }
                }
            }
        }
        tracing::warn!(url = %self.config.base_url, "sample failed after retries");
        Ok(String::new())
    }
}

/// Draws `n` completions for one prompt. Sample `i` carries the request
/// seed `fork_seed(seed, i)`, so repeated identical prompts still differ
/// and the whole set is reproducible. Results come back in sample order;
/// samples that keep failing transiently become empty strings.
pub async fn sample_completions(
    endpoint: &Endpoint,
    request: &ChatRequest,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, EndpointError> {
    let tasks = (0..n).map(|i| {
        let mut req = request.clone();
        req.seed = Some(fork_seed(seed, &i.to_string()));
        endpoint.sample_once(req)
    });
    join_all(tasks).await.into_iter().collect()
}
