use std::collections::BTreeMap;

use super::{CoreCounts, TaskGraph};

/// ASAP/ALAP start times under unlimited cores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticalInfo {
    pub asap: Vec<u64>,
    pub alap: Vec<u64>,
    pub slack: Vec<u64>,
    pub best_latency: u64,
}

impl CriticalInfo {
    pub fn is_critical(&self, v: usize) -> bool {
        self.slack[v] == 0
    }

    pub fn critical_ops(&self) -> Vec<usize> {
        (0..self.slack.len())
            .filter(|&v| self.slack[v] == 0)
            .collect()
    }

    pub fn critical_ids(&self, tasks: &TaskGraph) -> Vec<String> {
        let mut ids: Vec<String> = self
            .critical_ops()
            .into_iter()
            .map(|v| tasks.id(v).to_string())
            .collect();
        ids.sort();
        ids
    }

    pub fn by_id<'a>(&self, tasks: &'a TaskGraph, values: &[u64]) -> BTreeMap<&'a str, u64> {
        (0..tasks.len()).map(|v| (tasks.id(v), values[v])).collect()
    }
}

pub fn compute_asap_alap(tasks: &TaskGraph) -> CriticalInfo {
    let n = tasks.len();
    let mut asap = vec![0u64; n];
    for &v in tasks.topo() {
        asap[v] = tasks
            .preds(v)
            .iter()
            .map(|&p| asap[p] + tasks.latency(p))
            .max()
            .unwrap_or(0);
    }
    let best_latency = (0..n)
        .map(|v| asap[v] + tasks.latency(v))
        .max()
        .unwrap_or(0);
    let mut alap = vec![0u64; n];
    for &v in tasks.topo().iter().rev() {
        let finish_by = tasks
            .succs(v)
            .iter()
            .map(|&s| alap[s])
            .min()
            .unwrap_or(best_latency);
        alap[v] = finish_by - tasks.latency(v);
    }
    let slack = (0..n).map(|v| alap[v] - asap[v]).collect();
    CriticalInfo {
        asap,
        alap,
        slack,
        best_latency,
    }
}

/// Largest number of ops of each core type running at once in the ASAP
/// schedule. More cores than this can never be kept busy by that schedule.
pub fn parallelism_bound(tasks: &TaskGraph, info: &CriticalInfo) -> CoreCounts {
    // (time, delta) sweep; ends sort before starts at the same instant
    let mut tensor: Vec<(u64, i32)> = Vec::new();
    let mut vector: Vec<(u64, i32)> = Vec::new();
    for v in 0..tasks.len() {
        let lat = tasks.latency(v);
        if lat == 0 {
            continue;
        }
        let (s, e) = (info.asap[v], info.asap[v] + lat);
        let a = tasks.affinity(v);
        if a.uses_tensor() {
            tensor.push((s, 1));
            tensor.push((e, -1));
        }
        if a.uses_vector() {
            vector.push((s, 1));
            vector.push((e, -1));
        }
    }
    let peak = |mut ev: Vec<(u64, i32)>| {
        ev.sort_unstable();
        let (mut cur, mut best) = (0i32, 0i32);
        for (_, d) in ev {
            cur += d;
            best = best.max(cur);
        }
        best as u32
    };
    CoreCounts::new(peak(tensor), peak(vector))
}
