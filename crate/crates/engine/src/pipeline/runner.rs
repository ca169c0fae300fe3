//! Drives the iteration loop and persists progress.
//!
//! Work is a fixed sequence of units: `steps_per_phase` Questioner steps,
//! one curation pass, `steps_per_phase` Solver steps, per iteration. The
//! state file names the last finished unit and is rewritten only after
//! that unit's files are in place (and, with a trainer hook, after the
//! trainer has acknowledged its batch). Every unit is deterministic, so a
//! unit interrupted half-way is simply redone on resume.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use evoforge_core::grpo::emit_training_batch;
use evoforge_core::{validate_config, BatchMeta, PipelineConfig, RolloutGroup, VideoRef};
use serde::{Deserialize, Serialize};

use super::hook::{BatchNotice, TrainerHook};
use super::metrics::compute_iteration_metrics;
use super::phases::{
    phase1_questioner_step, phase1_videos, phase2_construct_dataset, phase3_indices, phase3_solver_step,
    CurationOutcome,
};
use super::store::{read_dataset, read_json, write_atomic, write_dataset, write_json, RunLayout};
use super::{Clients, Phase, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u32,
    pub phase: Phase,
    pub step: u32,
}

impl Checkpoint {
    /// The unit after `last`, or the first unit; `None` once the run is done.
    pub fn next(cfg: &PipelineConfig, last: Option<Checkpoint>) -> Option<Checkpoint> {
        let steps = cfg.steps_per_phase;
        let start_of = |iteration: u32| {
            (iteration <= cfg.iterations).then_some(Checkpoint {
                iteration,
                phase: if steps > 0 { Phase::Questioner } else { Phase::Curate },
                step: 1,
            })
        };
        let Some(last) = last else {
            return start_of(1);
        };
        let at = |phase, step| {
            Some(Checkpoint {
                iteration: last.iteration,
                phase,
                step,
            })
        };
        match last.phase {
            Phase::Questioner if last.step < steps => at(Phase::Questioner, last.step + 1),
            Phase::Questioner => at(Phase::Curate, 1),
            Phase::Curate if steps > 0 => at(Phase::Solver, 1),
            Phase::Solver if last.step < steps => at(Phase::Solver, last.step + 1),
            Phase::Curate | Phase::Solver => start_of(last.iteration + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    /// Last finished unit of work.
    pub completed: Option<Checkpoint>,
    pub finished: bool,
    /// Emitted batch files, relative to the run directory, in order.
    pub batches: Vec<String>,
    pub datasets: Vec<String>,
}

pub struct Runner {
    cfg: PipelineConfig,
    clients: Clients,
    videos: Vec<VideoRef>,
    by_id: HashMap<String, VideoRef>,
    layout: RunLayout,
    hook: TrainerHook,
}

impl Runner {
    /// `videos` is truncated to `max_videos` when that is set.
    pub fn new(
        cfg: PipelineConfig,
        clients: Clients,
        mut videos: Vec<VideoRef>,
        run_dir: impl Into<PathBuf>,
    ) -> Result<Self, PipelineError> {
        let violations = validate_config(&cfg);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(PipelineError::Config(text.join("; ")));
        }
        let hook = TrainerHook::parse(&cfg.trainer_hook).map_err(PipelineError::Config)?;
        if let Some(max) = cfg.max_videos {
            videos.truncate(max);
        }
        let mut by_id = HashMap::new();
        for video in &videos {
            if by_id.insert(video.video_id.clone(), video.clone()).is_some() {
                return Err(PipelineError::Config(format!("duplicate video id {}", video.video_id)));
            }
        }
        Ok(Self {
            cfg,
            clients,
            videos,
            by_id,
            layout: RunLayout::new(run_dir),
            hook,
        })
    }

    pub fn layout(&self) -> &RunLayout {
        &self.layout
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub async fn run(&self, resume: bool) -> Result<RunState, PipelineError> {
        self.run_until(resume, None).await
    }

    /// Runs at most `max_units` units and returns the persisted state, as if
    /// the process had been stopped there.
    pub async fn run_until(&self, resume: bool, max_units: Option<usize>) -> Result<RunState, PipelineError> {
        let mut state = self.open(resume)?;
        let mut done = 0;
        while let Some(unit) = Checkpoint::next(&self.cfg, state.completed) {
            if max_units.is_some_and(|max| done >= max) {
                return Ok(state);
            }
            tracing::info!(iteration = unit.iteration, phase = %unit.phase, step = unit.step, "running");
            self.execute(unit, &mut state).await?;
            state.completed = Some(unit);
            state.finished = Checkpoint::next(&self.cfg, state.completed).is_none();
            write_json(&self.layout.state(), &state)?;
            done += 1;
        }
        Ok(state)
    }

    fn config_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.cfg).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }

    fn open(&self, resume: bool) -> Result<RunState, PipelineError> {
        let root = self.layout.root.display().to_string();
        let state_path = self.layout.state();
        if state_path.exists() {
            if !resume {
                return Err(PipelineError::AlreadyStarted(root));
            }
            let stored = std::fs::read(self.layout.config()).unwrap_or_default();
            if stored != self.config_bytes() {
                return Err(PipelineError::ConfigChanged(root));
            }
            return Ok(read_json(&state_path)?);
        }
        if resume {
            return Err(PipelineError::NotStarted(root));
        }
        write_atomic(&self.layout.config(), &self.config_bytes())?;
        let state = RunState {
            run_id: self.cfg.run_id(),
            completed: None,
            finished: false,
            batches: Vec::new(),
            datasets: Vec::new(),
        };
        write_json(&state_path, &state)?;
        Ok(state)
    }

    async fn execute(&self, unit: Checkpoint, state: &mut RunState) -> Result<(), PipelineError> {
        let Checkpoint { iteration, step, .. } = unit;
        match unit.phase {
            Phase::Questioner => {
                let selected: Vec<VideoRef> = phase1_videos(&self.videos, &self.cfg, iteration, step)
                    .into_iter()
                    .cloned()
                    .collect();
                let groups = phase1_questioner_step(&selected, &self.cfg, &self.clients, iteration, step).await?;
                let path = self.layout.questioner_batch(iteration, step);
                self.emit(unit, &groups, path, state).await?;
            }
            Phase::Curate => {
                self.curate(iteration).await?;
                state.datasets.push(self.layout.relative(&self.layout.curated(iteration)));
            }
            Phase::Solver => {
                let dataset = read_dataset(&self.layout.curated(iteration))?;
                let examples: Vec<_> = phase3_indices(dataset.len(), &self.cfg, iteration, step)
                    .into_iter()
                    .map(|i| dataset[i].clone())
                    .collect();
                let groups =
                    phase3_solver_step(&examples, &self.by_id, &self.cfg, &self.clients, iteration, step).await?;
                let path = self.layout.solver_batch(iteration, step);
                self.emit(unit, &groups, path, state).await?;
                if step == self.cfg.steps_per_phase {
                    let metrics = compute_iteration_metrics(&self.layout, iteration, self.cfg.steps_per_phase)?;
                    write_json(&self.layout.metrics(iteration), &metrics)?;
                }
            }
        }
        Ok(())
    }

    /// Phase 2 alone: writes the curated dataset and its counts for
    /// `iteration`, without touching the state file.
    pub async fn curate(&self, iteration: u32) -> Result<CurationOutcome, PipelineError> {
        let outcome = phase2_construct_dataset(&self.videos, &self.cfg, &self.clients, iteration).await?;
        write_dataset(&self.layout.curated(iteration), &outcome.examples)?;
        write_json(&self.layout.curation_stats(iteration), &outcome.stats)?;
        Ok(outcome)
    }

    async fn emit(
        &self,
        unit: Checkpoint,
        groups: &[RolloutGroup],
        path: PathBuf,
        state: &mut RunState,
    ) -> Result<(), PipelineError> {
        let meta = BatchMeta {
            iteration: unit.iteration,
            phase_step: unit.step,
            kl_coeff: self.cfg.kl_coeff,
        };
        let mut bytes = Vec::new();
        let records = emit_training_batch(groups, meta, &mut bytes)?;
        write_atomic(&path, &bytes)?;
        let relative = self.layout.relative(&path);
        let notice = BatchNotice {
            run_id: state.run_id.clone(),
            iteration: unit.iteration,
            phase: unit.phase,
            step: unit.step,
            batch: relative.clone(),
            records,
        };
        let timeout = Duration::from_secs_f64(self.cfg.trainer_timeout_s);
        self.hook.wait(&path, &notice, timeout).await?;
        state.batches.push(relative);
        Ok(())
    }
}
