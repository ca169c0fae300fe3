//! Offline Solver reward recomputation against a curated dataset.
//!
//! Input lines are either solver batch records (`prompt_ref` +
//! `completion`) or flat `{video_id, question, completion}` objects. Each
//! is matched to its curated example by video id and question text; the
//! question may be omitted when the video has a single example.

use std::collections::HashMap;

use evoforge_core::parse::parse_solver_output;
use evoforge_core::rewards::solver_breakdown;
use evoforge_core::{
    answers_equivalent, normalize_answer, CuratedExample, PromptRef, RewardBreakdown, RewardWeights,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Deserialize)]
pub struct ScoreInput {
    #[serde(default)]
    pub prompt_ref: Option<PromptRef>,
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default)]
    pub question: Option<String>,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredOutput {
    pub line: usize,
    pub video_id: String,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("line {line}: no video id")]
    MissingVideo { line: usize },
    #[error("line {line}: no curated example for video {video_id}")]
    NoExample { line: usize, video_id: String },
    #[error("line {line}: video {video_id} has several examples; give the question")]
    Ambiguous { line: usize, video_id: String },
}

pub fn score_solver_outputs(
    inputs: &[ScoreInput],
    dataset: &[CuratedExample],
    weights: &RewardWeights,
) -> Result<Vec<ScoredOutput>, ScoreError> {
    let mut by_video: HashMap<&str, Vec<&CuratedExample>> = HashMap::new();
    for example in dataset {
        by_video.entry(&example.video_id).or_default().push(example);
    }
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let line = i + 1;
            let (video_id, question) = match &input.prompt_ref {
                Some(p) => (Some(p.video_id.clone()), p.question.clone()),
                None => (input.video_id.clone(), input.question.clone()),
            };
            let video_id = video_id.ok_or(ScoreError::MissingVideo { line })?;
            let no_example = || ScoreError::NoExample {
                line,
                video_id: video_id.clone(),
            };
            let candidates = by_video.get(video_id.as_str()).ok_or_else(no_example)?;
            let example = match &question {
                Some(q) => *candidates
                    .iter()
                    .find(|e| &e.question.question_text == q)
                    .ok_or_else(no_example)?,
                None if candidates.len() == 1 => candidates[0],
                None => {
                    return Err(ScoreError::Ambiguous {
                        line,
                        video_id: video_id.clone(),
                    })
                }
            };
            let qtype = example.question.question_type;
            let pseudo = normalize_answer(&example.pseudo_answer, qtype);
            let parsed = parse_solver_output(&input.completion);
            let correct = parsed
                .answer
                .as_deref()
                .is_some_and(|a| answers_equivalent(&normalize_answer(a, qtype), &pseudo));
            let reward = solver_breakdown(
                correct,
                parsed.format_valid_answer,
                parsed.segment,
                example.window.segment(),
                weights,
            );
            Ok(ScoredOutput {
                line,
                video_id,
                reward,
            })
        })
        .collect()
}
