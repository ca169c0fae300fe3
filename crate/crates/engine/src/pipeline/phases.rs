//! The three phases of one self-play iteration.

use std::collections::HashMap;

use evoforge_core::parse::{parse_questioner_output, parse_solver_output};
use evoforge_core::perturb::{apply_permutation, make_permutation, sample_window, PerturbError};
use evoforge_core::rewards::{confidence, majority_vote_samples, questioner_breakdown, solver_breakdown};
use evoforge_core::seed::{fork_seed, task_rng};
use evoforge_core::textsim::{average_linkage_cluster, diversity_penalty, SimilarityMatrix};
use evoforge_core::{
    answers_equivalent, normalize_answer, AnswerKey, CuratedExample, PipelineConfig, PromptRef,
    QuestionRecord, RewardBreakdown, RewardWeights, Role, Rollout, RolloutGroup, VideoRef,
};
use futures::{StreamExt, TryStreamExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Clients, Phase, PipelineError};
use crate::modelclient::{build_questioner_request, build_solver_request, sample_completions};

fn answer_keys(raw: &[String], question: &QuestionRecord) -> Vec<Option<AnswerKey>> {
    raw.iter()
        .map(|r| {
            parse_solver_output(r)
                .answer
                .map(|a| normalize_answer(&a, question.question_type))
        })
        .collect()
}

/// Confidence on the original video and on one shuffled copy, both
/// against the original majority vote. No valid original answer means no
/// pseudo-label, scored as zero confidence on both.
async fn question_confidences(
    video: &VideoRef,
    question: &QuestionRecord,
    label: String,
    cfg: &PipelineConfig,
    clients: &Clients,
) -> Result<(f64, f64), PipelineError> {
    let mut rng = task_rng(cfg.rng_seed, &format!("{label}/perm"));
    let permutation = make_permutation(video.frame_count(), cfg.shuffle_strategy, &mut rng);
    let shuffled = apply_permutation(video, &permutation)?;
    let solver = &clients.solver;
    let original_req = build_solver_request(video, &question.question_text, &solver.config);
    let shuffled_req = build_solver_request(&shuffled, &question.question_text, &solver.config);
    clients.audit(Phase::Questioner, Role::Solver, &original_req);
    clients.audit(Phase::Questioner, Role::Solver, &shuffled_req);
    let (original, shuffled) = futures::try_join!(
        sample_completions(solver, &original_req, cfg.solver_samples, fork_seed(cfg.rng_seed, &format!("{label}/orig"))),
        sample_completions(solver, &shuffled_req, cfg.solver_samples, fork_seed(cfg.rng_seed, &format!("{label}/shuf"))),
    )?;
    let original = answer_keys(&original, question);
    let shuffled = answer_keys(&shuffled, question);
    Ok(match majority_vote_samples(&original) {
        Some(vote) => (confidence(&original, &vote.pseudo), confidence(&shuffled, &vote.pseudo)),
        None => (0.0, 0.0),
    })
}

async fn questioner_group(
    video: &VideoRef,
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
    step: u32,
) -> Result<RolloutGroup, PipelineError> {
    let label = format!("p1/{iteration}/{step}/{}", video.video_id);
    let request = build_questioner_request(video, &clients.questioner.config);
    clients.audit(Phase::Questioner, Role::Questioner, &request);
    let seed = fork_seed(cfg.rng_seed, &format!("{label}/questions"));
    let raw = sample_completions(&clients.questioner, &request, cfg.group_size, seed).await?;
    let parsed: Vec<Option<QuestionRecord>> = raw.iter().map(|r| parse_questioner_output(r).ok()).collect();

    let valid: Vec<(usize, &QuestionRecord)> = parsed
        .iter()
        .enumerate()
        .filter_map(|(i, q)| q.as_ref().map(|q| (i, q)))
        .collect();
    let scores = futures::future::try_join_all(
        valid
            .iter()
            .map(|(i, q)| question_confidences(video, q, format!("{label}/q{i}"), cfg, clients)),
    )
    .await?;
    let texts: Vec<&str> = valid.iter().map(|(_, q)| q.question_text.as_str()).collect();
    let clustering = average_linkage_cluster(&SimilarityMatrix::from_texts(&texts), cfg.tau_bleu);

    let mut rewards: Vec<RewardBreakdown> = vec![RewardBreakdown::questioner_rejected(); raw.len()];
    for (slot, (&(i, _), &(s_orig, s_shuf))) in valid.iter().zip(&scores).enumerate() {
        let penalty = diversity_penalty(&clustering, slot, cfg.group_size, cfg.lambda_d);
        rewards[i] = questioner_breakdown(s_orig, s_shuf, penalty, clustering.size_of(slot), cfg.lambda_q)?;
    }
    let rollouts = raw
        .into_iter()
        .zip(rewards)
        .map(|(raw_output, reward)| Rollout {
            raw_output,
            reward,
            advantage: None,
        })
        .collect();
    let mut group = RolloutGroup::new(
        format!("i{iteration}-q{step:03}-{}", video.video_id),
        Role::Questioner,
        PromptRef {
            video_id: video.video_id.clone(),
            question: None,
        },
        rollouts,
    );
    group.normalize(cfg.advantage_epsilon)?;
    Ok(group)
}

/// Phase 1: one Questioner group per video, in input order.
pub async fn phase1_questioner_step(
    videos: &[VideoRef],
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
    step: u32,
) -> Result<Vec<RolloutGroup>, PipelineError> {
    futures::stream::iter(videos)
        .map(|video| questioner_group(video, cfg, clients, iteration, step))
        .buffered(cfg.workers.max(1))
        .try_collect()
        .await
}

/// Videos drawn without replacement for one phase-1 step.
pub fn phase1_videos<'a>(videos: &'a [VideoRef], cfg: &PipelineConfig, iteration: u32, step: u32) -> Vec<&'a VideoRef> {
    let mut rng = task_rng(cfg.rng_seed, &format!("p1/{iteration}/{step}/videos"));
    let k = cfg.videos_per_step.min(videos.len());
    rand::seq::index::sample(&mut rng, videos.len(), k)
        .into_iter()
        .map(|i| &videos[i])
        .collect()
}

/// Counts from one curation pass; persisted beside the dataset so the yield
/// can be recomputed from files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub videos: usize,
    pub skipped_short: usize,
    pub format_rejected: usize,
    pub no_valid_answers: usize,
    pub out_of_band: usize,
    pub kept: usize,
}

impl CurationStats {
    /// Kept over videos long enough to window.
    pub fn yield_rate(&self) -> Option<f64> {
        let considered = self.videos - self.skipped_short;
        (considered > 0).then(|| self.kept as f64 / considered as f64)
    }

    fn add(&mut self, other: &CurationStats) {
        self.videos += other.videos;
        self.skipped_short += other.skipped_short;
        self.format_rejected += other.format_rejected;
        self.no_valid_answers += other.no_valid_answers;
        self.out_of_band += other.out_of_band;
        self.kept += other.kept;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationOutcome {
    pub examples: Vec<CuratedExample>,
    pub stats: CurationStats,
}

async fn curate_video(
    video: &VideoRef,
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
    pass: u32,
) -> Result<(Option<CuratedExample>, CurationStats), PipelineError> {
    let mut stats = CurationStats {
        videos: 1,
        ..Default::default()
    };
    let label = format!("p2/{iteration}/{pass}/{}", video.video_id);
    let mut rng = task_rng(cfg.rng_seed, &format!("{label}/window"));
    let window = match sample_window(video, cfg.window_length, &mut rng) {
        Ok(w) => w,
        Err(PerturbError::VideoTooShort { .. }) => {
            tracing::debug!(video = %video.video_id, "shorter than the window, skipped");
            stats.skipped_short = 1;
            return Ok((None, stats));
        }
        Err(e) => return Err(e.into()),
    };
    let clip = video.clip(&window);
    let request = build_questioner_request(&clip, &clients.questioner.config);
    clients.audit(Phase::Curate, Role::Questioner, &request);
    let seed = fork_seed(cfg.rng_seed, &format!("{label}/question"));
    let raw = sample_completions(&clients.questioner, &request, 1, seed).await?;
    let Ok(mut question) = parse_questioner_output(&raw[0]) else {
        stats.format_rejected = 1;
        return Ok((None, stats));
    };
    question.source_window = Some(window);

    let request = build_solver_request(video, &question.question_text, &clients.solver.config);
    clients.audit(Phase::Curate, Role::Solver, &request);
    let seed = fork_seed(cfg.rng_seed, &format!("{label}/answers"));
    let answers = sample_completions(&clients.solver, &request, cfg.solver_samples, seed).await?;
    let keys = answer_keys(&answers, &question);
    let Some(vote) = majority_vote_samples(&keys) else {
        stats.no_valid_answers = 1;
        return Ok((None, stats));
    };
    let s = confidence(&keys, &vote.pseudo);
    if !(cfg.s_min() <= s && s <= cfg.s_max()) {
        stats.out_of_band = 1;
        return Ok((None, stats));
    }
    stats.kept = 1;
    let example = CuratedExample {
        video_id: video.video_id.clone(),
        window,
        question,
        pseudo_answer: vote.pseudo.canonical,
        confidence: s,
        iteration,
        extra: Default::default(),
    };
    Ok((Some(example), stats))
}

/// Phase 2: one windowed question per video per pass, kept when the
/// Solver's confidence lies in the score band (both ends inclusive).
pub async fn phase2_construct_dataset(
    videos: &[VideoRef],
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
) -> Result<CurationOutcome, PipelineError> {
    let mut outcome = CurationOutcome {
        examples: Vec::new(),
        stats: CurationStats::default(),
    };
    for pass in 1..=cfg.phase2_passes.max(1) {
        let results: Vec<_> = futures::stream::iter(videos)
            .map(|video| curate_video(video, cfg, clients, iteration, pass))
            .buffered(cfg.workers.max(1))
            .try_collect()
            .await?;
        for (example, stats) in results {
            outcome.stats.add(&stats);
            outcome.examples.extend(example);
        }
    }
    if outcome.stats.skipped_short > 0 {
        tracing::info!(skipped = outcome.stats.skipped_short, "videos shorter than the window");
    }
    Ok(outcome)
}

/// Dataset indices for one phase-3 step: a fixed per-iteration shuffle read
/// in consecutive, wrapping chunks.
pub fn phase3_indices(dataset_len: usize, cfg: &PipelineConfig, iteration: u32, step: u32) -> Vec<usize> {
    if dataset_len == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..dataset_len).collect();
    order.shuffle(&mut task_rng(cfg.rng_seed, &format!("p3/{iteration}/order")));
    let start = (step.saturating_sub(1) as usize) * cfg.examples_per_step;
    (0..cfg.examples_per_step)
        .map(|j| order[(start + j) % dataset_len])
        .collect()
}

async fn solver_group(
    slot: usize,
    example: &CuratedExample,
    video: &VideoRef,
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
    step: u32,
) -> Result<RolloutGroup, PipelineError> {
    let question = &example.question;
    let request = build_solver_request(video, &question.question_text, &clients.solver.config);
    clients.audit(Phase::Solver, Role::Solver, &request);
    let label = format!("p3/{iteration}/{step}/{slot}/{}", example.video_id);
    let raw = sample_completions(&clients.solver, &request, cfg.group_size, fork_seed(cfg.rng_seed, &label)).await?;
    let pseudo = normalize_answer(&example.pseudo_answer, question.question_type);
    let weights = RewardWeights::from(cfg);
    let target = example.window.segment();
    let rollouts = raw
        .into_iter()
        .map(|raw_output| {
            let parsed = parse_solver_output(&raw_output);
            let correct = parsed
                .answer
                .as_deref()
                .is_some_and(|a| answers_equivalent(&normalize_answer(a, question.question_type), &pseudo));
            let reward = solver_breakdown(correct, parsed.format_valid_answer, parsed.segment, target, &weights);
            Rollout {
                raw_output,
                reward,
                advantage: None,
            }
        })
        .collect();
    let mut group = RolloutGroup::new(
        format!("i{iteration}-s{step:03}-{slot:03}-{}", example.video_id),
        Role::Solver,
        PromptRef {
            video_id: example.video_id.clone(),
            question: Some(question.question_text.clone()),
        },
        rollouts,
    );
    group.normalize(cfg.advantage_epsilon)?;
    Ok(group)
}

/// Phase 3: one Solver group per example, sampled on the full video and
/// grounded against the stored window.
pub async fn phase3_solver_step(
    examples: &[CuratedExample],
    videos: &HashMap<String, VideoRef>,
    cfg: &PipelineConfig,
    clients: &Clients,
    iteration: u32,
    step: u32,
) -> Result<Vec<RolloutGroup>, PipelineError> {
    let mut jobs = Vec::with_capacity(examples.len());
    for (slot, example) in examples.iter().enumerate() {
        let video = videos
            .get(&example.video_id)
            .ok_or_else(|| PipelineError::UnknownVideo(example.video_id.clone()))?;
        jobs.push((slot, example, video));
    }
    futures::stream::iter(jobs)
        .map(|(slot, example, video)| solver_group(slot, example, video, cfg, clients, iteration, step))
        .buffered(cfg.workers.max(1))
        .try_collect()
        .await
}
