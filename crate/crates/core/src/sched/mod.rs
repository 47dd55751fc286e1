//! Critical-path analysis, list scheduling and the core-count heuristic.

pub mod critical;
pub mod heuristic;
pub mod list;
mod tasks;
pub mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchError;

pub use critical::{compute_asap_alap, parallelism_bound, CriticalInfo};
pub use heuristic::{
    compare_candidates, heuristic_core_search, rank_candidates, Candidate, HeuristicOutcome,
    StopReason,
};
pub use list::{greedy_list_schedule, list_schedule, CoreSlot, Schedule, ScheduleCache};
pub use tasks::TaskGraph;
pub use validate::{validate_against_graph, validate_schedule, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("no {0} core available for an operator that needs one")]
    NoCoreForAffinity(CoreType),
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("task graph has a cycle")]
    Cycle,
    #[error("cannot search cores for an empty graph")]
    EmptyGraph,
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreType {
    Tensor,
    Vector,
}

impl std::fmt::Display for CoreType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoreType::Tensor => "tensor",
            CoreType::Vector => "vector",
        })
    }
}

/// Number of cores of each type.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct CoreCounts {
    pub tensor: u32,
    pub vector: u32,
}

impl CoreCounts {
    pub const fn new(tensor: u32, vector: u32) -> Self {
        Self { tensor, vector }
    }

    pub fn get(&self, c: CoreType) -> u32 {
        match c {
            CoreType::Tensor => self.tensor,
            CoreType::Vector => self.vector,
        }
    }

    pub fn with(mut self, c: CoreType, n: u32) -> Self {
        match c {
            CoreType::Tensor => self.tensor = n,
            CoreType::Vector => self.vector = n,
        }
        self
    }

    pub fn dominated_by(&self, other: &CoreCounts) -> bool {
        self.tensor <= other.tensor && self.vector <= other.vector
    }
}
