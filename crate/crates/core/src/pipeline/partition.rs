//! Memory-balanced contiguous split of a training graph into stages.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::arch::SystemConfig;
use crate::cost::training_memory_footprint;
use crate::graph::{Pass, TrainingGraph, LOSS_ID};

use super::{PipelineError, PipelineParams, Scheme};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageInfo {
    pub index: usize,
    pub forward_ops: Vec<String>,
    pub op_count: usize,
    pub in_flight: u64,
    pub param_bytes: u64,
    pub stash_bytes: u64,
    pub footprint_bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StagePartition {
    pub stages: Vec<StageInfo>,
    /// Activation bytes crossing each of the `s - 1` stage boundaries.
    pub boundary_activation_bytes: Vec<u64>,
    #[serde(skip)]
    pub stage_graphs: Vec<TrainingGraph>,
}

/// Micro-batches whose activations stage `i` (0-based) keeps stashed.
pub fn stage_in_flight(pp: &PipelineParams, stage: usize) -> u64 {
    let m = u64::from(pp.microbatches);
    match pp.scheme {
        Scheme::Gpipe => m,
        Scheme::Pipedream => (u64::from(pp.depth) - stage as u64).min(m),
    }
}

/// Splits the forward ops, in topological order, into exactly `depth`
/// contiguous stages minimizing the largest per-stage footprint. Each stage
/// owns its forward ops, their gradient and update ops, and stashes the
/// inputs of its forward ops; the loss goes to the last stage.
pub fn partition_model(
    tg: &TrainingGraph,
    pp: &PipelineParams,
    cfg: &SystemConfig,
) -> Result<StagePartition, PipelineError> {
    pp.validate()?;
    let g = &tg.graph;
    let fwd = tg.forward_graph();
    let order: Vec<usize> = fwd.topo_indices().to_vec();
    let n = order.len();
    let s = pp.depth as usize;
    if n < s {
        return Err(PipelineError::InvalidParams(format!(
            "{s} stages but only {n} forward operators"
        )));
    }
    let pos: Vec<usize> = {
        let mut p = vec![0; fwd.len()];
        for (i, &u) in order.iter().enumerate() {
            p[u] = i;
        }
        p
    };

    // params[a][b] and stash[a][b] for the unit range a..b
    let mult = 2 + cfg.cost_model.optimizer_state_multiplier;
    let mut params = vec![vec![0u64; n + 1]; n + 1];
    let mut stash = vec![vec![0u64; n + 1]; n + 1];
    for a in 0..n {
        let mut producers = BTreeSet::new();
        let (mut p, mut st) = (0u64, 0u64);
        for b in a..n {
            let v = order[b];
            p += fwd.op(v).param_bytes;
            for &u in fwd.preds(v) {
                if producers.insert(u) {
                    st += fwd.op(u).activation_bytes;
                }
            }
            params[a][b + 1] = p;
            stash[a][b + 1] = st;
        }
    }
    let cost = |a: usize, b: usize, stage: usize| {
        mult * params[a][b] + stage_in_flight(pp, stage) * stash[a][b]
    };

    let min_flight_stage = (0..s).min_by_key(|&i| stage_in_flight(pp, i)).unwrap_or(0);
    for (a, &op) in order.iter().enumerate() {
        let c = cost(a, a + 1, min_flight_stage);
        if c > cfg.hbm_bytes {
            return Err(PipelineError::UnpartitionableModel(format!(
                "operator {} needs {c} bytes of HBM on its own, more than the {} available",
                fwd.op(op).id,
                cfg.hbm_bytes
            )));
        }
    }

    const INF: u64 = u64::MAX;
    let mut best = vec![vec![INF; n + 1]; s];
    let mut split = vec![vec![0usize; n + 1]; s];
    for (j, b) in best[0].iter_mut().enumerate().skip(1) {
        *b = cost(0, j, 0);
    }
    for i in 1..s {
        for j in (i + 1)..=n {
            for k in i..j {
                if best[i - 1][k] == INF {
                    continue;
                }
                let v = best[i - 1][k].max(cost(k, j, i));
                if v < best[i][j] {
                    best[i][j] = v;
                    split[i][j] = k;
                }
            }
        }
    }
    let peak = best[s - 1][n];
    if peak > cfg.hbm_bytes {
        return Err(PipelineError::UnpartitionableModel(format!(
            "the best {s}-stage split still needs {peak} bytes on one device, more than the {} available",
            cfg.hbm_bytes
        )));
    }
    let mut bounds = vec![n; s + 1];
    bounds[0] = 0;
    let mut j = n;
    for i in (1..s).rev() {
        j = split[i][j];
        bounds[i] = j;
    }

    let stage_of_unit: Vec<usize> = {
        let mut v = vec![0; n];
        for i in 0..s {
            for slot in v.iter_mut().take(bounds[i + 1]).skip(bounds[i]) {
                *slot = i;
            }
        }
        v
    };
    let mut stages = Vec::with_capacity(s);
    let mut stage_graphs = Vec::with_capacity(s);
    for i in 0..s {
        let ids: BTreeSet<String> = order[bounds[i]..bounds[i + 1]]
            .iter()
            .map(|&u| fwd.op(u).id.clone())
            .collect();
        let keep: BTreeSet<usize> = (0..g.len())
            .filter(|&x| {
                let op = g.op(x);
                match op.pass {
                    Pass::Forward => ids.contains(&op.id),
                    Pass::Loss => i == s - 1 && op.id == LOSS_ID,
                    _ => op
                        .mirror_of
                        .as_ref()
                        .is_some_and(|m| ids.contains(tg.fused.get(m).unwrap_or(m))),
                }
            })
            .collect();
        let sg = tg.induced(format!("{}/s{i}", g.name()), &keep);
        let in_flight = stage_in_flight(pp, i);
        let footprint = training_memory_footprint(&sg, in_flight, cfg);
        stages.push(StageInfo {
            index: i,
            forward_ops: order[bounds[i]..bounds[i + 1]]
                .iter()
                .map(|&u| fwd.op(u).id.clone())
                .collect(),
            op_count: sg.graph.len(),
            in_flight,
            param_bytes: sg.total_param_bytes(),
            stash_bytes: sg.stash_bytes,
            footprint_bytes: footprint,
        });
        stage_graphs.push(sg);
    }

    let mut boundary = vec![0u64; s.saturating_sub(1)];
    for (b, slot) in boundary.iter_mut().enumerate() {
        let mut producers = BTreeSet::new();
        for &(u, v) in fwd.edges() {
            if stage_of_unit[pos[u]] <= b && stage_of_unit[pos[v]] > b {
                producers.insert(u);
            }
        }
        *slot = producers.iter().map(|&u| fwd.op(u).activation_bytes).sum();
    }
    Ok(StagePartition {
        stages,
        boundary_activation_bytes: boundary,
        stage_graphs,
    })
}
