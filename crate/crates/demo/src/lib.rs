//! Pure views over the reward and clustering code, exported to the page
//! through wasm-bindgen when built for `wasm32`.

use evoforge_core::parse::{normalize_answer, parse_solver_output, AnswerKind};
use evoforge_core::rewards::{questioner_breakdown, questioner_total, solver_breakdown};
use evoforge_core::textsim::{average_linkage_cluster, diversity_penalty, SimilarityMatrix};
use evoforge_core::{answers_equivalent, RewardBreakdown, RewardWeights, Segment};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterView {
    pub questions: Vec<String>,
    pub similarity: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub penalties: Vec<f64>,
}

/// Clusters one question per non-empty line and reports each question's
/// diversity penalty within the group.
pub fn cluster_questions(text: &str, tau: f64, lambda_d: f64) -> ClusterView {
    let questions: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let n = questions.len();
    let sim = SimilarityMatrix::from_texts(&questions);
    let clustering = average_linkage_cluster(&sim, tau);
    let similarity = (0..n).map(|i| (0..n).map(|j| sim.get(i, j)).collect()).collect();
    let penalties = (0..n)
        .map(|i| diversity_penalty(&clustering, i, n, lambda_d))
        .collect();
    let cluster_sizes = (0..n).map(|i| clustering.size_of(i)).collect();
    ClusterView {
        questions,
        similarity,
        assignment: clustering.assignment,
        cluster_sizes,
        penalties,
    }
}

/// Questioner totals on a `(steps + 1)^2` grid of original (rows) and
/// shuffled (columns) confidences.
pub fn questioner_grid(steps: usize, diversity: f64, lambda_q: f64) -> Vec<Vec<f64>> {
    let steps = steps.max(1);
    let at = |k: usize| k as f64 / steps as f64;
    (0..=steps)
        .map(|i| {
            (0..=steps)
                .map(|j| {
                    let (s, s_shuf) = (at(i), at(j));
                    questioner_total(1, s.min(1.0 - s), diversity, (s - s_shuf).max(0.0), lambda_q)
                })
                .collect()
        })
        .collect()
}

pub fn questioner_reward(
    s_orig: f64,
    s_shuf: f64,
    diversity: f64,
    lambda_q: f64,
) -> Result<RewardBreakdown, String> {
    questioner_breakdown(s_orig, s_shuf, diversity, 0, lambda_q)
        .map(|mut b| {
            b.cluster_size = None;
            b
        })
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverView {
    pub answer: Option<String>,
    pub segment: Option<Segment>,
    pub correct: bool,
    pub reward: RewardBreakdown,
}

fn answer_kind(name: &str) -> Result<AnswerKind, String> {
    match name {
        "multiple_choice" => Ok(AnswerKind::MultipleChoice),
        "numerical" => Ok(AnswerKind::Numerical),
        "regression" => Ok(AnswerKind::Regression),
        other => Err(format!("unknown question type {other:?}")),
    }
}

/// Parses a Solver completion and scores it against a reference answer
/// and time window.
pub fn score_completion(
    completion: &str,
    reference: &str,
    kind: &str,
    window: (f64, f64),
    format_weight: f64,
    lambda_s: f64,
) -> Result<SolverView, String> {
    let kind = answer_kind(kind)?;
    let target = Segment::new(window.0, window.1)
        .ok_or_else(|| format!("invalid window [{}, {}]", window.0, window.1))?;
    let parsed = parse_solver_output(completion);
    let reference = normalize_answer(reference, kind);
    let correct = parsed
        .answer
        .as_deref()
        .is_some_and(|a| answers_equivalent(&normalize_answer(a, kind), &reference));
    let weights = RewardWeights {
        lambda_q: 0.0,
        lambda_s,
        format_weight,
    };
    let reward = solver_breakdown(
        correct,
        parsed.format_valid_answer,
        parsed.segment,
        target,
        &weights,
    );
    Ok(SolverView {
        answer: parsed.answer,
        segment: parsed.segment,
        correct,
        reward,
    })
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    fn json<T: serde::Serialize>(value: &T) -> String {
        serde_json::to_string(value).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
    }

    fn json_result<T: serde::Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
        value.map(|v| json(&v)).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen]
    pub fn cluster_questions(text: &str, tau: f64, lambda_d: f64) -> String {
        json(&super::cluster_questions(text, tau, lambda_d))
    }

    #[wasm_bindgen]
    pub fn questioner_grid(steps: usize, diversity: f64, lambda_q: f64) -> String {
        json(&super::questioner_grid(steps, diversity, lambda_q))
    }

    #[wasm_bindgen]
    pub fn questioner_reward(s_orig: f64, s_shuf: f64, diversity: f64, lambda_q: f64) -> Result<String, JsValue> {
        json_result(super::questioner_reward(s_orig, s_shuf, diversity, lambda_q))
    }

    #[wasm_bindgen]
    pub fn score_completion(
        completion: &str,
        reference: &str,
        kind: &str,
        t_s: f64,
        t_e: f64,
        format_weight: f64,
        lambda_s: f64,
    ) -> Result<String, JsValue> {
        json_result(super::score_completion(
            completion,
            reference,
            kind,
            (t_s, t_e),
            format_weight,
            lambda_s,
        ))
    }
}
