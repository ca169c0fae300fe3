//! Reward math and data types for temporal self-play between a Questioner
//! and a Solver video model.
//!
//! Everything here is pure and synchronous. Model access, the mock
//! endpoint and the co-evolution loop live in `evoforge-engine`.

pub mod config;
pub mod grpo;
pub mod parse;
pub mod perturb;
pub mod rewards;
pub mod seed;
pub mod textsim;
pub mod types;

pub use config::{validate_config, ConfigError, PipelineConfig, Violation};
pub use grpo::{group_advantages, BatchMeta, BatchRecord, PromptRef, Rollout, RolloutGroup};
pub use parse::{answers_equivalent, normalize_answer, AnswerKey, AnswerKind};
pub use perturb::{Permutation, ShuffleStrategy};
pub use rewards::RewardWeights;
pub use types::{
    CuratedExample, FrameRef, FrameWindow, QuestionRecord, QuestionType, RewardBreakdown, Role,
    Segment, SolverResponse, VideoRef,
};
