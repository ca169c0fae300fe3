//! Scripted, deterministic stand-in for both policies.
//!
//! A script is a TOML file of named profiles. The Questioner side picks a
//! profile by weight and fills one of its templates; the Solver side maps a
//! question back to its profile by matching the templates, answers
//! correctly with the profile's probability (a different one when the
//! frames arrive out of order) and emits a segment per the profile's
//! segment behaviour.
//!
//! Every response is drawn from an RNG keyed on the mock seed and the exact
//! request bytes, so the same request always gets the same answer no matter
//! when or in which order it arrives.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use evoforge_core::parse::{canonical_number, render_question, render_solver_output};
use evoforge_core::seed::{keyed_hash, TaskRng};
use evoforge_core::{QuestionRecord, QuestionType, Segment};
use rand::{Rng, SeedableRng};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::modelclient::{
    parse_frame_url, BackendError, ChatBackend, ChatRequest, QUESTIONER_PROMPT, SOLVER_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing script: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("profile {profile}: {message}")]
    Invalid { profile: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAnswer {
    pub answer: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentBehavior {
    /// Echo the `{ts}`/`{te}` span written into the question, or the span
    /// of the attached frames when the question carries none.
    EchoWindow,
    Fixed([f64; 2]),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockProfile {
    #[serde(default = "one")]
    pub weight: f64,
    pub question_type: QuestionType,
    /// Placeholders: `{n}` a random integer, `{ts}`/`{te}` the first and
    /// last timestamp of the frames the Questioner saw.
    pub questioner_templates: Vec<String>,
    pub correct_answer: String,
    /// Wrong answers. When empty, every wrong answer is a fresh distinct
    /// value, so wrong answers never form a class of their own.
    #[serde(default)]
    pub answer_pool: Vec<WeightedAnswer>,
    pub p_correct_orig: f64,
    pub p_correct_shuffled: f64,
    pub segment_behavior: SegmentBehavior,
    #[serde(default)]
    pub questioner_format_error_rate: f64,
    #[serde(default)]
    pub solver_format_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub profiles: BTreeMap<String, MockProfile>,
}

impl MockScript {
    pub fn from_toml(text: &str) -> Result<Self, MockScriptError> {
        let script: Self = toml::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MockScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// A script with a single profile.
    pub fn single(name: &str, profile: MockProfile) -> Self {
        Self {
            profiles: BTreeMap::from([(name.to_string(), profile)]),
        }
    }

    pub fn validate(&self) -> Result<(), MockScriptError> {
        let invalid = |profile: &str, message: &str| MockScriptError::Invalid {
            profile: profile.to_string(),
            message: message.to_string(),
        };
        if self.profiles.is_empty() {
            return Err(invalid("-", "script has no profiles"));
        }
        for (name, p) in &self.profiles {
            let probabilities = [
                ("p_correct_orig", p.p_correct_orig),
                ("p_correct_shuffled", p.p_correct_shuffled),
                ("questioner_format_error_rate", p.questioner_format_error_rate),
                ("solver_format_error_rate", p.solver_format_error_rate),
            ];
            for (field, value) in probabilities {
                if !(0.0..=1.0).contains(&value) {
                    return Err(invalid(name, &format!("{field} = {value} outside [0, 1]")));
                }
            }
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(invalid(name, "weight must be positive"));
            }
            if p.questioner_templates.is_empty() {
                return Err(invalid(name, "no questioner templates"));
            }
            if p.questioner_templates.iter().any(|t| t.trim().is_empty()) {
                return Err(invalid(name, "empty questioner template"));
            }
            if p.correct_answer.trim().is_empty() {
                return Err(invalid(name, "empty correct answer"));
            }
            if p.answer_pool.iter().any(|a| !(a.weight.is_finite() && a.weight > 0.0)) {
                return Err(invalid(name, "answer pool weights must be positive"));
            }
            if let SegmentBehavior::Fixed([a, b]) = p.segment_behavior {
                if Segment::new(a, b).is_none() {
                    return Err(invalid(name, "fixed segment must satisfy 0 <= start <= end"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MockError {
    #[error("malformed request: {0}")]
    Malformed(String),
}

struct CompiledTemplate {
    regex: Regex,
}

fn compile_template(template: &str) -> CompiledTemplate {
    let placeholder = Regex::new(r"\{(n|ts|te)\}").expect("static regex");
    let mut pattern = String::from("^");
    let mut last = 0;
    let mut named = [false; 2];
    for m in placeholder.captures_iter(template) {
        let whole = m.get(0).expect("match");
        pattern.push_str(&regex::escape(&template[last..whole.start()]));
        let number = r"[0-9]+(?:\.[0-9]*)?";
        match &m[1] {
            "ts" if !named[0] => {
                named[0] = true;
                pattern.push_str(&format!("(?P<ts>{number})"));
            }
            "te" if !named[1] => {
                named[1] = true;
                pattern.push_str(&format!("(?P<te>{number})"));
            }
            _ => pattern.push_str(&format!("(?:{number})")),
        }
        last = whole.end();
    }
    pattern.push_str(&regex::escape(&template[last..]));
    pattern.push('$');
    CompiledTemplate {
        regex: Regex::new(&pattern).expect("escaped template compiles"),
    }
}

/// Request classification, exposed for audits and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Questioner,
    Solver,
}

pub fn classify(request: &ChatRequest) -> Option<RequestKind> {
    let text = request.prompt_text();
    if text.starts_with(QUESTIONER_PROMPT) {
        Some(RequestKind::Questioner)
    } else if text.ends_with(SOLVER_INSTRUCTION) {
        Some(RequestKind::Solver)
    } else {
        None
    }
}

/// Frames arrived out of canonical order.
pub fn is_shuffled(request: &ChatRequest) -> bool {
    let indices: Vec<usize> = request
        .attachments()
        .iter()
        .filter_map(|url| parse_frame_url(url).map(|(i, _)| i))
        .collect();
    indices.windows(2).any(|w| w[0] >= w[1])
}

fn attachment_span(request: &ChatRequest) -> Option<(f64, f64)> {
    let times: Vec<f64> = request
        .attachments()
        .iter()
        .filter_map(|url| parse_frame_url(url).map(|(_, t)| t))
        .collect();
    let lo = times.iter().copied().reduce(f64::min)?;
    let hi = times.iter().copied().reduce(f64::max)?;
    Some((lo, hi))
}

pub struct MockEngine {
    script: MockScript,
    seed: u64,
    templates: Vec<(String, Vec<CompiledTemplate>)>,
}

impl MockEngine {
    pub fn new(script: MockScript, seed: u64) -> Self {
        let templates = script
            .profiles
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    p.questioner_templates.iter().map(|t| compile_template(t)).collect(),
                )
            })
            .collect();
        Self {
            script,
            seed,
            templates,
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// All `request.n` choices for one request.
    pub fn respond(&self, request: &ChatRequest) -> Result<Vec<String>, MockError> {
        let kind = classify(request)
            .ok_or_else(|| MockError::Malformed("prompt matches neither role".into()))?;
        if request.n == 0 {
            return Err(MockError::Malformed("n must be at least 1".into()));
        }
        let bytes = request.to_bytes();
        Ok((0..request.n)
            .map(|choice| {
                let mut keyed = bytes.clone();
                keyed.extend_from_slice(&choice.to_le_bytes());
                let mut rng = TaskRng::seed_from_u64(keyed_hash(self.seed, &keyed));
                match kind {
                    RequestKind::Questioner => self.question(request, &mut rng),
                    RequestKind::Solver => self.answer(request, &mut rng),
                }
            })
            .collect())
    }

    fn pick_profile(&self, rng: &mut TaskRng) -> (&String, &MockProfile) {
        let total: f64 = self.script.profiles.values().map(|p| p.weight).sum();
        let mut x = rng.gen::<f64>() * total;
        for (name, p) in &self.script.profiles {
            if x < p.weight {
                return (name, p);
            }
            x -= p.weight;
        }
        self.script.profiles.iter().next_back().expect("script has profiles")
    }

    fn question(&self, request: &ChatRequest, rng: &mut TaskRng) -> String {
        let (_, profile) = self.pick_profile(rng);
        let template = &profile.questioner_templates[rng.gen_range(0..profile.questioner_templates.len())];
        let (ts, te) = attachment_span(request).unwrap_or((0.0, 0.0));
        let n: u32 = rng.gen_range(1..1_000_000);
        let text = template
            .replace("{n}", &n.to_string())
            .replace("{ts}", &ts.to_string())
            .replace("{te}", &te.to_string());
        if rng.gen_bool(profile.questioner_format_error_rate) {
            return format!("Here is a question about the video: {text}");
        }
        render_question(&QuestionRecord {
            question_type: profile.question_type,
            question_text: text,
            reference_answer: profile.correct_answer.clone(),
            source_window: None,
            raw_output: String::new(),
        })
    }

    /// Profile whose template produced `question`, with any echoed span.
    fn match_question(&self, question: &str) -> Option<(&MockProfile, Option<(f64, f64)>)> {
        for (name, compiled) in &self.templates {
            for template in compiled {
                if let Some(caps) = template.regex.captures(question) {
                    let span = match (caps.name("ts"), caps.name("te")) {
                        (Some(a), Some(b)) => a.as_str().parse().ok().zip(b.as_str().parse().ok()),
                        _ => None,
                    };
                    return Some((&self.script.profiles[name], span));
                }
            }
        }
        None
    }

    fn answer(&self, request: &ChatRequest, rng: &mut TaskRng) -> String {
        let text = request.prompt_text();
        let question = text.strip_suffix(SOLVER_INSTRUCTION).unwrap_or(&text);
        let Some((profile, span)) = self.match_question(question) else {
            let guess = format!("x{}", rng.gen_range(1..1_000_000u32));
            return render_solver_output("I cannot place this question.", Some(&guess), None);
        };
        if rng.gen_bool(profile.solver_format_error_rate) {
            return "The frames do not make the answer clear.".to_string();
        }
        let p = if is_shuffled(request) {
            profile.p_correct_shuffled
        } else {
            profile.p_correct_orig
        };
        let answer = if rng.gen_bool(p) {
            profile.correct_answer.clone()
        } else {
            wrong_answer(profile, rng)
        };
        let segment = match profile.segment_behavior {
            SegmentBehavior::None => None,
            SegmentBehavior::Fixed([a, b]) => Segment::new(a, b),
            SegmentBehavior::EchoWindow => span
                .or_else(|| attachment_span(request))
                .and_then(|(a, b)| Segment::new(a, b)),
        };
        render_solver_output("Looking at the frames in order.", Some(&answer), segment)
    }
}

fn wrong_answer(profile: &MockProfile, rng: &mut TaskRng) -> String {
    let pool: Vec<&WeightedAnswer> = profile
        .answer_pool
        .iter()
        .filter(|a| a.answer != profile.correct_answer)
        .collect();
    if pool.is_empty() {
        let offset: u32 = rng.gen_range(1..1_000_000);
        return match profile.correct_answer.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => canonical_number(v + f64::from(offset)),
            _ => format!("x{offset}"),
        };
    }
    let total: f64 = pool.iter().map(|a| a.weight).sum();
    let mut x = rng.gen::<f64>() * total;
    for a in &pool {
        if x < a.weight {
            return a.answer.clone();
        }
        x -= a.weight;
    }
    pool[pool.len() - 1].answer.clone()
}

/// In-process backend: the same engine without the HTTP hop.
pub struct MockBackend {
    engine: Arc<MockEngine>,
}

impl MockBackend {
    pub fn new(engine: Arc<MockEngine>) -> Self {
        Self { engine }
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut choices = self
            .engine
            .respond(request)
            .map_err(|e| BackendError::Rejected(e.to_string()))?;
        Ok(choices.swap_remove(0))
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireChoice<'a> {
    index: usize,
    message: WireMessage<'a>,
    finish_reason: &'static str,
}

#[derive(Serialize)]
struct WireResponse<'a> {
    id: String,
    object: &'static str,
    created: u64,
    model: &'a str,
    choices: Vec<WireChoice<'a>>,
}

fn wire_error(status: StatusCode, message: String) -> Response {
    let body = serde_json::json!({ "error": { "message": message, "type": "invalid_request_error" } });
    (status, Json(body)).into_response()
}

async fn chat_completions(State(engine): State<Arc<MockEngine>>, body: Bytes) -> Response {
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return wire_error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let choices = match engine.respond(&request) {
        Ok(c) => c,
        Err(e) => return wire_error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let id = format!("mock-{:016x}", keyed_hash(engine.seed, &request.to_bytes()));
    let response = WireResponse {
        id,
        object: "chat.completion",
        created: 0,
        model: &request.model,
        choices: choices
            .iter()
            .enumerate()
            .map(|(index, content)| WireChoice {
                index,
                message: WireMessage {
                    role: "assistant",
                    content,
                },
                finish_reason: "stop",
            })
            .collect(),
    };
    Json(response).into_response()
}

pub fn mock_router(engine: Arc<MockEngine>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/chat/completions", post(chat_completions))
        .with_state(engine)
}

/// A running mock endpoint.
pub struct MockServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.handle.await.map_err(std::io::Error::other)?
    }

    /// Serves until the process is stopped.
    pub async fn wait(self) -> std::io::Result<()> {
        self.handle.await.map_err(std::io::Error::other)?
    }
}

/// Binds `addr` (port 0 picks a free one) and serves the chat-completions
/// route in a background task.
pub async fn serve_mock(script: MockScript, seed: u64, addr: SocketAddr) -> std::io::Result<MockServer> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = mock_router(Arc::new(MockEngine::new(script, seed)));
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(MockServer {
        addr,
        shutdown: Some(tx),
        handle,
    })
}
