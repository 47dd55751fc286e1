//! Analytical per-operator latency and energy.
//!
//! Tensor ops use an output-stationary systolic model: each `rows x cols`
//! output tile streams `K` operands plus `rows + cols - 1` cycles of fill and
//! drain. Vector ops process `width` elements per cycle. Latency is the
//! roofline maximum of compute cycles and HBM transfer cycles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{CoreDims, SystemConfig};
use crate::graph::{Affinity, OpKind, Operator, TrainingGraph};
use crate::sched::TaskGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub latency_cycles: u64,
    pub energy_j: f64,
    pub core: Affinity,
    pub compute_cycles: u64,
    pub memory_cycles: u64,
    pub moved_bytes: u64,
}

/// HBM bytes an operator moves, before and after on-chip reuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Traffic {
    pub input_bytes: u64,
    pub stash_read_bytes: u64,
    pub output_bytes: u64,
    pub param_bytes: u64,
    /// Bytes that stay on chip because producer and consumer run back to back.
    pub reuse_discount: u64,
}

impl Traffic {
    /// Traffic of an operator seen in isolation: it reads its own operands.
    pub fn standalone(op: &Operator, element_bytes: u64) -> Self {
        Self {
            input_bytes: own_input_bytes(op, element_bytes),
            stash_read_bytes: 0,
            output_bytes: op.activation_bytes,
            param_bytes: op.param_bytes,
            reuse_discount: 0,
        }
    }

    pub fn moved_bytes(&self) -> u64 {
        (self.input_bytes + self.stash_read_bytes + self.output_bytes + self.param_bytes)
            .saturating_sub(self.reuse_discount)
    }
}

fn own_input_bytes(op: &Operator, element_bytes: u64) -> u64 {
    match (op.tensor, op.elements) {
        (Some(s), _) => s.m * s.k * element_bytes,
        (None, Some(e)) => e * element_bytes,
        (None, None) => 0,
    }
}

pub fn tensor_compute_cycles(m: u64, n: u64, k: u64, dims: CoreDims) -> u64 {
    let (r, c) = (u64::from(dims.tc_rows), u64::from(dims.tc_cols));
    m.div_ceil(r) * n.div_ceil(c) * (k + r + c - 1)
}

pub fn vector_compute_cycles(elements: u64, dims: CoreDims) -> u64 {
    elements.div_ceil(u64::from(dims.vc_width))
}

pub fn compute_cycles(op: &Operator, dims: CoreDims) -> u64 {
    let tensor = op
        .tensor
        .map(|s| tensor_compute_cycles(s.m, s.n, s.k, dims));
    let vector = op.elements.map(|e| vector_compute_cycles(e, dims));
    match op.kind {
        OpKind::Gemm | OpKind::Conv => tensor.unwrap_or(0),
        OpKind::Vector => vector.unwrap_or(0),
        // the two halves are pipelined against each other
        OpKind::Fused => tensor.unwrap_or(0).max(vector.unwrap_or(0)),
    }
}

/// Ring allreduce time in cycles: `2 (w - 1) / w * bytes / bandwidth`.
pub fn allreduce_cycles(bytes: u64, width: u32, cfg: &SystemConfig) -> u64 {
    if width <= 1 {
        return 0;
    }
    let w = f64::from(width);
    let secs = 2.0 * (w - 1.0) / w * bytes as f64 / cfg.interconnect_bw_bytes_per_s;
    (secs * cfg.clock_hz).ceil() as u64
}

pub fn estimate_op_with_traffic(
    op: &Operator,
    traffic: &Traffic,
    dims: CoreDims,
    cfg: &SystemConfig,
) -> OpCost {
    let cm = &cfg.cost_model;
    let compute = compute_cycles(op, dims);
    let (moved, memory) = match op.collective {
        Some(c) => (c.bytes, allreduce_cycles(c.bytes, c.width, cfg)),
        None => {
            let moved = traffic.moved_bytes();
            let cycles = (moved as f64 * cfg.clock_hz / cfg.hbm_bw_bytes_per_s).ceil() as u64;
            (moved, cycles)
        }
    };
    let macs = op.tensor.map(|s| s.macs()).unwrap_or(0);
    let elements = op.elements.unwrap_or(0);
    let pj = cm.e_mac_pj * macs as f64
        + cm.e_vec_pj * elements as f64
        + cm.e_hbm_pj_per_byte * moved as f64
        + cm.e_sram_pj_per_byte * 2.0 * moved as f64;
    OpCost {
        latency_cycles: compute.max(memory).max(1),
        energy_j: pj * 1e-12,
        core: op.affinity,
        compute_cycles: compute,
        memory_cycles: memory,
        moved_bytes: moved,
    }
}

/// Cost of a single operator with standalone traffic.
pub fn estimate_op(op: &Operator, dims: CoreDims, cfg: &SystemConfig) -> OpCost {
    estimate_op_with_traffic(op, &Traffic::standalone(op, cfg.element_bytes), dims, cfg)
}

/// Per-op HBM traffic inside a training graph, including the static reuse
/// discount: when a producer feeds exactly one consumer, the consumer reads
/// the tensor from chip, and the producer skips the HBM write unless the
/// tensor is stashed for the backward pass.
pub fn graph_traffic(tg: &TrainingGraph, element_bytes: u64) -> Vec<Traffic> {
    let g = &tg.graph;
    let stashed: std::collections::BTreeSet<&str> =
        tg.stash.iter().map(|s| s.producer.as_str()).collect();
    let mut stash_reads: BTreeMap<&str, u64> = BTreeMap::new();
    for s in &tg.stash {
        *stash_reads.entry(s.consumer.as_str()).or_default() += s.bytes;
    }
    let mut traffic: Vec<Traffic> = (0..g.len())
        .map(|i| {
            let op = g.op(i);
            let input_bytes = if g.preds(i).is_empty() {
                own_input_bytes(op, element_bytes)
            } else {
                g.preds(i).iter().map(|&p| g.op(p).activation_bytes).sum()
            };
            Traffic {
                input_bytes,
                stash_read_bytes: stash_reads.get(op.id.as_str()).copied().unwrap_or(0),
                output_bytes: op.activation_bytes,
                param_bytes: op.param_bytes,
                reuse_discount: 0,
            }
        })
        .collect();
    for &(u, v) in g.edges() {
        if g.succs(u).len() != 1 {
            continue;
        }
        let bytes = g.op(u).activation_bytes;
        traffic[v].reuse_discount += bytes;
        if !stashed.contains(g.op(u).id.as_str()) {
            traffic[u].reuse_discount += bytes;
        }
    }
    traffic
}

#[derive(Debug, Clone)]
pub struct AnnotatedGraph {
    pub graph: TrainingGraph,
    pub dims: CoreDims,
    pub costs: BTreeMap<String, OpCost>,
}

impl AnnotatedGraph {
    pub fn cost(&self, id: &str) -> &OpCost {
        &self.costs[id]
    }

    /// Scheduling view: latencies and affinities in graph index order.
    pub fn tasks(&self) -> TaskGraph {
        let g = &self.graph.graph;
        let latency: Vec<u64> = g
            .ops()
            .iter()
            .map(|op| self.costs[&op.id].latency_cycles)
            .collect();
        TaskGraph::from_graph(g, latency)
    }

    pub fn total_energy_j(&self) -> f64 {
        self.costs.values().map(|c| c.energy_j).sum()
    }
}

pub fn annotate(g: &TrainingGraph, dims: CoreDims, cfg: &SystemConfig) -> AnnotatedGraph {
    let traffic = graph_traffic(g, cfg.element_bytes);
    let costs = g
        .graph
        .ops()
        .iter()
        .zip(&traffic)
        .map(|(op, t)| (op.id.clone(), estimate_op_with_traffic(op, t, dims, cfg)))
        .collect();
    AnnotatedGraph {
        graph: g.clone(),
        dims,
        costs,
    }
}

/// HBM bytes to train a graph: weights, optimizer state, gradients and the
/// activation stash of every in-flight micro-batch.
pub fn training_memory_footprint(g: &TrainingGraph, in_flight: u64, cfg: &SystemConfig) -> u64 {
    let params = g.total_param_bytes();
    params + cfg.cost_model.optimizer_state_multiplier * params + params + g.stash_bytes * in_flight
}
