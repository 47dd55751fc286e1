//! Per-accelerator search: evaluate core dimensions, prune the dimension
//! tree, keep the top-k designs.

mod eval;
pub mod local;
pub mod pruner;
mod topk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, CoreDims};
use crate::graph::TrainingGraph;
use crate::ilp::{IlpError, SolveLimits};
use crate::par::ExecMode;
use crate::sched::ScheduleError;

pub use eval::{evaluate_dims, DimsEval, EngineNote, Scored, WorkloadScore};
pub use local::{dims_space, exhaustive_sweep, local_search, LocalResult};
pub use pruner::{prune_step, DimTree, NodeOracle, NodeState, StepDecision, Sweep, TraceRecord};
pub use topk::TopK;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("no workloads to search")]
    NoWorkloads,
    #[error("invalid search options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Heuristic,
    Ilp,
}

/// A training graph plus the samples one execution of it processes.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub graph: TrainingGraph,
    pub samples_per_iteration: u64,
}

impl Workload {
    pub fn new(name: impl Into<String>, graph: TrainingGraph, samples_per_iteration: u64) -> Self {
        Self {
            name: name.into(),
            graph,
            samples_per_iteration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Largest dimensions; the tree root.
    pub root: CoreDims,
    pub min_dim: u32,
    pub hysteresis_levels: u32,
    /// Alternating TC/VC sweep rounds before giving up on a fixed point.
    pub max_rounds: u32,
    pub engine: Engine,
    pub limits: SolveLimits,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            root: CoreDims::new(256, 256, 256),
            min_dim: 8,
            hysteresis_levels: 1,
            max_rounds: 3,
            engine: Engine::Heuristic,
            limits: SolveLimits::default(),
            exec: ExecMode::default(),
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<(), SearchError> {
        self.root.validate()?;
        let dims = [self.root.tc_rows, self.root.tc_cols, self.root.vc_width];
        if self.min_dim == 0 || dims.iter().any(|&d| d < self.min_dim) {
            return Err(SearchError::InvalidOptions(format!(
                "root {} must be at least the minimum dimension {}",
                self.root, self.min_dim
            )));
        }
        if self.max_rounds == 0 {
            return Err(SearchError::InvalidOptions(
                "max_rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
