//! Run configuration: a flat TOML file where unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::ShuffleStrategy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// One broken constraint, named by field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run directory name under `run_root`; derived from the seed when unset.
    pub run_id: Option<String>,
    pub run_root: String,
    /// JSONL file of videos, one `VideoRef` per line.
    pub videos: String,
    pub max_videos: Option<usize>,

    pub group_size: usize,
    pub solver_samples: usize,
    pub window_length: usize,
    pub lambda_q: f64,
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub format_weight: f64,
    pub tau_bleu: f64,
    pub score_band: [f64; 2],
    pub iterations: u32,
    pub steps_per_phase: u32,
    /// Questioner groups (one per video) per phase-1 step.
    pub videos_per_step: usize,
    /// Curated examples (one Solver group each) per phase-3 step.
    pub examples_per_step: usize,
    pub phase2_passes: u32,
    pub shuffle_strategy: ShuffleStrategy,
    pub rng_seed: u64,
    /// Forwarded to the trainer in every batch record.
    pub kl_coeff: f64,
    pub advantage_epsilon: f64,

    pub questioner_base_url: String,
    pub questioner_model: String,
    pub solver_base_url: String,
    pub solver_model: String,
    pub timeout_s: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: Option<u32>,
    /// Videos processed concurrently within a step.
    pub workers: usize,

    /// Empty for none, `file` to wait for `<batch>.ack`, or an HTTP URL.
    pub trainer_hook: String,
    pub trainer_timeout_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            run_root: "run".into(),
            videos: "videos.jsonl".into(),
            max_videos: None,
            group_size: 8,
            solver_samples: 10,
            window_length: 8,
            lambda_q: 0.1,
            lambda_s: 0.3,
            lambda_d: 1.0,
            format_weight: 0.1,
            tau_bleu: 0.5,
            score_band: [0.3, 0.8],
            iterations: 3,
            steps_per_phase: 20,
            videos_per_step: 16,
            examples_per_step: 16,
            phase2_passes: 1,
            shuffle_strategy: ShuffleStrategy::Random,
            rng_seed: 0,
            kl_coeff: 1e-2,
            advantage_epsilon: 1e-8,
            questioner_base_url: "http://127.0.0.1:8000/v1".into(),
            questioner_model: "questioner".into(),
            solver_base_url: "http://127.0.0.1:8000/v1".into(),
            solver_model: "solver".into(),
            timeout_s: 120.0,
            max_in_flight: 16,
            max_retries: 2,
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: None,
            workers: 8,
            trainer_hook: String::new(),
            trainer_timeout_s: 3600.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Loads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_toml(&text)?;
        let violations = validate_config(&cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn s_min(&self) -> f64 {
        self.score_band[0]
    }

    pub fn s_max(&self) -> f64 {
        self.score_band[1]
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("seed{}", self.rng_seed))
    }
}

/// Reports every broken constraint; an empty list means the config is usable.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &'static str, message: &str| {
        if !ok {
            out.push(Violation {
                field,
                message: message.to_string(),
            });
        }
    };

    check(cfg.group_size >= 2, "group_size", "must be at least 2");
    check(cfg.solver_samples >= 2, "solver_samples", "must be at least 2");
    check(cfg.window_length >= 1, "window_length", "must be at least 1");
    for (field, value) in [
        ("lambda_q", cfg.lambda_q),
        ("lambda_s", cfg.lambda_s),
        ("lambda_d", cfg.lambda_d),
        ("tau_bleu", cfg.tau_bleu),
        ("kl_coeff", cfg.kl_coeff),
    ] {
        check(
            value.is_finite() && value >= 0.0,
            field,
            "must be finite and non-negative",
        );
    }
    check(
        (0.0..=1.0).contains(&cfg.format_weight),
        "format_weight",
        "must lie in [0, 1]",
    );
    let [s_min, s_max] = cfg.score_band;
    check(
        0.0 <= s_min && s_min <= s_max && s_max <= 1.0,
        "score_band",
        "must satisfy 0 <= s_min <= s_max <= 1",
    );
    check(cfg.iterations >= 1, "iterations", "must be at least 1");
    check(cfg.steps_per_phase >= 1, "steps_per_phase", "must be at least 1");
    check(cfg.videos_per_step >= 1, "videos_per_step", "must be at least 1");
    check(
        cfg.examples_per_step >= 1,
        "examples_per_step",
        "must be at least 1",
    );
    check(cfg.phase2_passes >= 1, "phase2_passes", "must be at least 1");
    check(
        cfg.advantage_epsilon.is_finite() && cfg.advantage_epsilon > 0.0,
        "advantage_epsilon",
        "must be finite and positive",
    );
    check(
        cfg.timeout_s.is_finite() && cfg.timeout_s > 0.0,
        "timeout_s",
        "must be positive",
    );
    check(cfg.max_in_flight >= 1, "max_in_flight", "must be at least 1");
    check(cfg.workers >= 1, "workers", "must be at least 1");
    check(
        cfg.temperature.is_finite() && cfg.temperature >= 0.0,
        "temperature",
        "must be finite and non-negative",
    );
    check(
        cfg.top_p > 0.0 && cfg.top_p <= 1.0,
        "top_p",
        "must lie in (0, 1]",
    );
    check(
        cfg.trainer_hook.is_empty()
            || cfg.trainer_hook == "file"
            || cfg.trainer_hook.starts_with("http://")
            || cfg.trainer_hook.starts_with("https://"),
        "trainer_hook",
        "must be empty, `file`, or an http(s) URL",
    );
    check(
        cfg.trainer_timeout_s.is_finite() && cfg.trainer_timeout_s > 0.0,
        "trainer_timeout_s",
        "must be positive",
    );
    if let Some(id) = &cfg.run_id {
        check(
            !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "run_id",
            "must be a non-empty name of [A-Za-z0-9._-]",
        );
    }
    out
}
