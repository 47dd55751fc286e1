//! Pipeline- and tensor-model-parallel training across several accelerators.

mod global;
mod partition;
mod tmp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::search::SearchError;

pub use global::{
    evaluate_plan, exhaustive_selection, global_search, select_plans, CommonPlan, GlobalResult,
    GlobalStats, Mode, ModelInput, ModelResult, PipelinePlan, PoolEntry, Selection, StageContext,
};
pub use partition::{partition_model, stage_in_flight, StageInfo, StagePartition};
pub use tmp::apply_tmp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid pipeline parameters: {0}")]
    InvalidParams(String),
    #[error("unpartitionable model: {0}")]
    UnpartitionableModel(String),
    #[error("indivisible shape: {0}")]
    IndivisibleShape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Gpipe,
    Pipedream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub depth: u32,
    pub scheme: Scheme,
    pub microbatches: u32,
    pub microbatch_size: u64,
    pub tmp_width: u32,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            depth: 32,
            scheme: Scheme::Gpipe,
            microbatches: 8,
            microbatch_size: 8,
            tmp_width: 1,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.depth == 0 {
            return Err(PipelineError::InvalidParams(
                "pipeline depth must be at least 1".into(),
            ));
        }
        if self.microbatches == 0 {
            return Err(PipelineError::InvalidParams(
                "number of micro-batches must be at least 1".into(),
            ));
        }
        if self.microbatch_size == 0 {
            return Err(PipelineError::InvalidParams(
                "micro-batch size must be at least 1".into(),
            ));
        }
        if self.tmp_width == 0 || !self.tmp_width.is_power_of_two() {
            return Err(PipelineError::InvalidParams(format!(
                "tensor-model-parallel width must be a power of two (got {})",
                self.tmp_width
            )));
        }
        Ok(())
    }
}

/// Bottleneck stage time: the slowest stage including the transfer to its
/// successor. `comm[i]` is the link between stage `i` and `i + 1`.
pub fn bottleneck_time(stage_times: &[f64], comm: &[f64]) -> f64 {
    stage_times
        .iter()
        .enumerate()
        .map(|(i, t)| t + comm.get(i).copied().unwrap_or(0.0))
        .fold(0.0, f64::max)
}

/// Iteration time `(m + s - 1) * t_b`. Both schemes share the closed form;
/// they differ in how many micro-batches each stage keeps stashed.
pub fn pipeline_iteration_time(stage_times: &[f64], comm: &[f64], pp: &PipelineParams) -> f64 {
    let s = stage_times.len() as f64;
    let m = f64::from(pp.microbatches);
    (m + s - 1.0) * bottleneck_time(stage_times, comm)
}
