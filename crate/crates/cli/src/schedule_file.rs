//! On-disk schedule format shared by `schedule` and `validate`.

use serde::{Deserialize, Serialize};

use dse_core::graph::Affinity;
use dse_core::sched::{CoreCounts, CoreSlot, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledOp {
    pub id: String,
    pub start: u64,
    pub latency: u64,
    pub affinity: Affinity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_core: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_core: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(default)]
    pub graph: String,
    pub tensor_cores: u32,
    pub vector_cores: u32,
    pub makespan: u64,
    pub ops: Vec<ScheduledOp>,
}

impl ScheduleFile {
    pub fn from_schedule(graph: &str, s: &Schedule) -> Self {
        let ops = (0..s.len())
            .map(|i| ScheduledOp {
                id: s.ids[i].clone(),
                start: s.start[i],
                latency: s.latency[i],
                affinity: s.affinity[i],
                tensor_core: s.slots[i].tensor,
                vector_core: s.slots[i].vector,
            })
            .collect();
        Self {
            graph: graph.to_string(),
            tensor_cores: s.counts.tensor,
            vector_cores: s.counts.vector,
            makespan: s.makespan,
            ops,
        }
    }

    pub fn to_schedule(&self) -> Schedule {
        Schedule {
            ids: self.ops.iter().map(|o| o.id.clone()).collect(),
            latency: self.ops.iter().map(|o| o.latency).collect(),
            affinity: self.ops.iter().map(|o| o.affinity).collect(),
            start: self.ops.iter().map(|o| o.start).collect(),
            slots: self
                .ops
                .iter()
                .map(|o| CoreSlot {
                    tensor: o.tensor_core,
                    vector: o.vector_core,
                })
                .collect(),
            ready: self.ops.iter().map(|o| o.start).collect(),
            makespan: self.makespan,
            counts: CoreCounts::new(self.tensor_cores, self.vector_cores),
        }
    }
}
