//! Group-relative advantages and the training-batch file the external
//! trainer consumes. The policy update itself happens trainer-side.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{RewardBreakdown, Role};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("a rollout group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("group `{0}` has no advantages yet")]
    NotNormalized(String),
    #[error("writing batch: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding batch record: {0}")]
    Encode(#[from] serde_json::Error),
}

/// `(r - mean) / (std + epsilon)` with the population std. A group whose
/// rewards are all equal gets exactly zero advantages.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    let degenerate = rewards.iter().all(|&r| r == rewards[0]) || std == 0.0;
    if degenerate {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect())
}

/// What the trainer needs to rebuild the prompt of a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRef {
    pub video_id: String,
    /// Question text for Solver groups; absent for Questioner groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub raw_output: String,
    pub reward: RewardBreakdown,
    pub advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub group_id: String,
    pub role: Role,
    pub prompt: PromptRef,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn new(group_id: impl Into<String>, role: Role, prompt: PromptRef, rollouts: Vec<Rollout>) -> Self {
        Self {
            group_id: group_id.into(),
            role,
            prompt,
            rollouts,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward.total).collect()
    }

    /// Fills in every rollout's advantage from the group's totals.
    pub fn normalize(&mut self, epsilon: f64) -> Result<(), GrpoError> {
        let advantages = group_advantages(&self.rewards(), epsilon)?;
        for (rollout, advantage) in self.rollouts.iter_mut().zip(advantages) {
            rollout.advantage = Some(advantage);
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.rollouts.iter().all(|r| r.advantage.is_some())
    }
}

/// Context stamped on every record of one batch file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMeta {
    pub iteration: u32,
    pub phase_step: u32,
    pub kl_coeff: f64,
}

/// One line of a training batch file. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub group_id: String,
    pub role: Role,
    pub iteration: u32,
    pub phase_step: u32,
    pub prompt_ref: PromptRef,
    pub completion: String,
    pub reward_total: f64,
    pub reward_components: RewardBreakdown,
    pub advantage: f64,
    pub kl_coeff: f64,
}

pub fn batch_records(groups: &[RolloutGroup], meta: BatchMeta) -> Result<Vec<BatchRecord>, GrpoError> {
    let mut records = Vec::new();
    for group in groups {
        for rollout in &group.rollouts {
            let advantage = rollout
                .advantage
                .ok_or_else(|| GrpoError::NotNormalized(group.group_id.clone()))?;
            records.push(BatchRecord {
                group_id: group.group_id.clone(),
                role: group.role,
                iteration: meta.iteration,
                phase_step: meta.phase_step,
                prompt_ref: group.prompt.clone(),
                completion: rollout.raw_output.clone(),
                reward_total: rollout.reward.total,
                reward_components: rollout.reward.clone(),
                advantage,
                kl_coeff: meta.kl_coeff,
            });
        }
    }
    Ok(records)
}

/// Writes one JSON line per rollout and returns the record count. Nothing is
/// written if any group lacks advantages.
pub fn emit_training_batch<W: Write>(
    groups: &[RolloutGroup],
    meta: BatchMeta,
    sink: &mut W,
) -> Result<usize, GrpoError> {
    let records = batch_records(groups, meta)?;
    for record in &records {
        serde_json::to_writer(&mut *sink, record)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(records.len())
}
