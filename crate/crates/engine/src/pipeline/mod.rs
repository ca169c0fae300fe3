//! The co-evolution loop: Questioner rollouts, dataset curation and Solver
//! rollouts, repeated for a fixed number of iterations and persisted to a
//! run directory after every unit of work.

pub mod hook;
pub mod metrics;
pub mod phases;
pub mod runner;
pub mod store;

use std::fmt;
use std::sync::{Arc, Mutex};

use evoforge_core::grpo::GrpoError;
use evoforge_core::perturb::PerturbError;
use evoforge_core::rewards::RewardError;
use evoforge_core::Role;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelclient::{ChatRequest, Endpoint, EndpointError};

pub use hook::TrainerHook;
pub use phases::{
    phase1_questioner_step, phase1_videos, phase2_construct_dataset, phase3_indices, phase3_solver_step,
    CurationOutcome, CurationStats,
};
pub use runner::{Checkpoint, RunState, Runner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Questioner,
    Curate,
    Solver,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Questioner => "questioner",
            Self::Curate => "curate",
            Self::Solver => "solver",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Hook(#[from] hook::HookError),
    #[error("curated example refers to unknown video {0}")]
    UnknownVideo(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} already holds a run; pass resume to continue it")]
    AlreadyStarted(String),
    #[error("{0} holds no run to resume")]
    NotStarted(String),
    #[error("configuration differs from the one {0} was started with")]
    ConfigChanged(String),
}

/// One request as the engine sent it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestAudit {
    pub phase: Phase,
    pub role: Role,
    pub attachments: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog(Arc<Mutex<Vec<RequestAudit>>>);

impl AuditLog {
    pub fn entries(&self) -> Vec<RequestAudit> {
        self.0.lock().expect("audit lock").clone()
    }

    fn push(&self, entry: RequestAudit) {
        self.0.lock().expect("audit lock").push(entry);
    }
}

/// The two policies, plus an optional log of every request built.
#[derive(Clone)]
pub struct Clients {
    pub questioner: Endpoint,
    pub solver: Endpoint,
    pub audit: Option<AuditLog>,
}

impl Clients {
    pub fn new(questioner: Endpoint, solver: Endpoint) -> Self {
        Self {
            questioner,
            solver,
            audit: None,
        }
    }

    pub fn with_audit(mut self, log: AuditLog) -> Self {
        self.audit = Some(log);
        self
    }

    fn audit(&self, phase: Phase, role: Role, request: &ChatRequest) {
        if let Some(log) = &self.audit {
            log.push(RequestAudit {
                phase,
                role,
                attachments: request.attachments().len(),
            });
        }
    }
}
