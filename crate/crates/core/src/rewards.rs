//! Scalar rewards for both roles.
//!
//! Questioner: `gate * (max(0, difficulty - diversity) + lambda_q * temporal)`
//! where difficulty is `min(s, 1 - s)` of the Solver's majority-vote
//! confidence and the temporal term is the confidence drop under a frame
//! shuffle, measured against the unshuffled pseudo-label.
//!
//! Solver: `(1 - w) * acc + w * fmt + lambda_s * iou * acc`, the grounding
//! bonus paid only on correct answers.

use thiserror::Error;

use crate::parse::{answers_equivalent, AnswerKey};
use crate::types::{RewardBreakdown, Role, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RewardError {
    #[error("{name} = {value} outside [0, 1]")]
    OutOfDomain { name: &'static str, value: f64 },
}

fn unit_interval(name: &'static str, value: f64) -> Result<f64, RewardError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(RewardError::OutOfDomain { name, value })
    }
}

/// Result of a majority vote: a representative of the largest class.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub pseudo: AnswerKey,
    pub count: usize,
}

/// Groups answers into classes (each joins the first class whose
/// representative it matches) and returns the largest; ties go to the
/// class seen first. `None` for an empty list.
pub fn majority_vote(answers: &[AnswerKey]) -> Option<Vote> {
    let mut classes: Vec<(usize, usize)> = Vec::new(); // (representative, size)
    for (i, answer) in answers.iter().enumerate() {
        match classes
            .iter_mut()
            .find(|(rep, _)| answers_equivalent(&answers[*rep], answer))
        {
            Some((_, size)) => *size += 1,
            None => classes.push((i, 1)),
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for &(rep, size) in &classes {
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((rep, size));
        }
    }
    best.map(|(rep, count)| Vote {
        pseudo: answers[rep].clone(),
        count,
    })
}

/// Majority vote over samples where `None` marks a format-invalid response.
/// Invalid samples never join a class.
pub fn majority_vote_samples(samples: &[Option<AnswerKey>]) -> Option<Vote> {
    let valid: Vec<AnswerKey> = samples.iter().flatten().cloned().collect();
    majority_vote(&valid)
}

/// Fraction of all samples equivalent to `pseudo`. Invalid samples count in
/// the denominator and never match.
pub fn confidence(samples: &[Option<AnswerKey>], pseudo: &AnswerKey) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let matching = samples
        .iter()
        .flatten()
        .filter(|a| answers_equivalent(a, pseudo))
        .count();
    matching as f64 / samples.len() as f64
}

pub fn difficulty_reward(s: f64) -> Result<f64, RewardError> {
    let s = unit_interval("s", s)?;
    Ok(s.min(1.0 - s))
}

pub fn temporal_aware_reward(s_orig: f64, s_shuf: f64) -> Result<f64, RewardError> {
    let s_orig = unit_interval("s_orig", s_orig)?;
    let s_shuf = unit_interval("s_shuf", s_shuf)?;
    Ok((s_orig - s_shuf).max(0.0))
}

pub fn questioner_total(fmt_gate: u8, diff: f64, div: f64, temp: f64, lambda_q: f64) -> f64 {
    if fmt_gate == 0 {
        return 0.0;
    }
    (diff - div).max(0.0) + lambda_q * temp
}

/// Overlap over union on the real line. Two identical segments score 1,
/// including identical points; distinct points score 0.
pub fn interval_iou(pred: Segment, target: Segment) -> f64 {
    if pred == target {
        return 1.0;
    }
    let intersection = (pred.t_e.min(target.t_e) - pred.t_s.max(target.t_s)).max(0.0);
    let union = pred.length() + target.length() - intersection;
    if union <= 0.0 {
        0.0
    } else {
        (intersection / union).clamp(0.0, 1.0)
    }
}

pub fn solver_total(acc: u8, fmt: u8, iou: f64, w: f64, lambda_s: f64) -> f64 {
    let acc = f64::from(acc);
    (1.0 - w) * acc + w * f64::from(fmt) + lambda_s * iou * acc
}

/// Reward weights the totals depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub lambda_q: f64,
    pub lambda_s: f64,
    pub format_weight: f64,
}

impl From<&crate::config::PipelineConfig> for RewardWeights {
    fn from(cfg: &crate::config::PipelineConfig) -> Self {
        Self {
            lambda_q: cfg.lambda_q,
            lambda_s: cfg.lambda_s,
            format_weight: cfg.format_weight,
        }
    }
}

impl RewardBreakdown {
    /// Total implied by the stored components.
    pub fn expected_total(&self, weights: &RewardWeights) -> f64 {
        match self.role {
            Role::Questioner => questioner_total(
                self.format_gate,
                self.difficulty,
                self.diversity_penalty,
                self.temporal_aware,
                weights.lambda_q,
            ),
            Role::Solver => solver_total(
                self.accuracy,
                self.format_term,
                self.iou,
                weights.format_weight,
                weights.lambda_s,
            ),
        }
    }
}

/// Reward for one format-valid Questioner rollout.
pub fn questioner_breakdown(
    s_orig: f64,
    s_shuf: f64,
    diversity: f64,
    cluster_size: usize,
    lambda_q: f64,
) -> Result<RewardBreakdown, RewardError> {
    let difficulty = difficulty_reward(s_orig)?;
    let temporal_aware = temporal_aware_reward(s_orig, s_shuf)?;
    Ok(RewardBreakdown {
        role: Role::Questioner,
        format_gate: 1,
        difficulty,
        diversity_penalty: diversity,
        temporal_aware,
        accuracy: 0,
        format_term: 0,
        iou: 0.0,
        total: questioner_total(1, difficulty, diversity, temporal_aware, lambda_q),
        confidence: Some(s_orig),
        shuffled_confidence: Some(s_shuf),
        cluster_size: Some(cluster_size),
    })
}

/// Reward for one Solver rollout. `iou` is recorded as 0 when the
/// prediction has no segment.
pub fn solver_breakdown(
    correct: bool,
    format_ok: bool,
    predicted: Option<Segment>,
    target: Segment,
    weights: &RewardWeights,
) -> RewardBreakdown {
    let accuracy = u8::from(correct);
    let format_term = u8::from(format_ok);
    let iou = predicted.map_or(0.0, |seg| interval_iou(seg, target));
    RewardBreakdown {
        role: Role::Solver,
        format_gate: format_term,
        difficulty: 0.0,
        diversity_penalty: 0.0,
        temporal_aware: 0.0,
        accuracy,
        format_term,
        iou,
        total: solver_total(accuracy, format_term, iou, weights.format_weight, weights.lambda_s),
        confidence: None,
        shuffled_confidence: None,
        cluster_size: None,
    }
}
