//! Event-driven list scheduling with critical-first priorities.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::Affinity;

use super::{CoreCounts, CoreType, CriticalInfo, ScheduleError, TaskGraph};

/// Core instance(s) an op runs on. BOTH-affinity ops hold one of each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoreSlot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub ids: Vec<String>,
    pub latency: Vec<u64>,
    pub affinity: Vec<Affinity>,
    pub start: Vec<u64>,
    pub slots: Vec<CoreSlot>,
    /// Cycle at which all predecessors had finished.
    pub ready: Vec<u64>,
    pub makespan: u64,
    /// Cores available to the schedule.
    pub counts: CoreCounts,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn finish(&self, v: usize) -> u64 {
        self.start[v] + self.latency[v]
    }

    /// Cycles an op waited for a free core after becoming ready.
    pub fn wait(&self, v: usize) -> u64 {
        self.start[v] - self.ready[v]
    }

    /// Highest core index actually used per type, plus one.
    pub fn cores_used(&self) -> CoreCounts {
        let t = self
            .slots
            .iter()
            .filter_map(|s| s.tensor)
            .map(|i| i + 1)
            .max()
            .unwrap_or(0);
        let v = self
            .slots
            .iter()
            .filter_map(|s| s.vector)
            .map(|i| i + 1)
            .max()
            .unwrap_or(0);
        CoreCounts::new(t, v)
    }
}

fn check_counts(tasks: &TaskGraph, counts: CoreCounts) -> Result<(), ScheduleError> {
    if tasks.uses_tensor() && counts.tensor == 0 {
        return Err(ScheduleError::NoCoreForAffinity(CoreType::Tensor));
    }
    if tasks.uses_vector() && counts.vector == 0 {
        return Err(ScheduleError::NoCoreForAffinity(CoreType::Vector));
    }
    Ok(())
}

/// One pass of non-delay list scheduling. Ready ops are ranked by slack,
/// then ASAP time, then id, and each takes the lowest free core index.
pub fn greedy_list_schedule(
    tasks: &TaskGraph,
    info: &CriticalInfo,
    counts: CoreCounts,
) -> Result<Schedule, ScheduleError> {
    check_counts(tasks, counts)?;
    let n = tasks.len();
    let mut pending: Vec<usize> = (0..n).map(|v| tasks.preds(v).len()).collect();
    let mut ready_at = vec![0u64; n];
    let mut start = vec![0u64; n];
    let mut slots = vec![CoreSlot::default(); n];
    let mut free_t: BTreeSet<u32> = (0..counts.tensor).collect();
    let mut free_v: BTreeSet<u32> = (0..counts.vector).collect();
    let mut running: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut ready: Vec<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
    let key = |v: usize| (info.slack[v], info.asap[v], tasks.id(v).to_string());
    let mut t = 0u64;
    let mut done = 0usize;

    while done < n {
        ready.sort_by_cached_key(|&v| key(v));
        let mut waiting = Vec::with_capacity(ready.len());
        for v in ready.drain(..) {
            let a = tasks.affinity(v);
            let fits = (!a.uses_tensor() || !free_t.is_empty())
                && (!a.uses_vector() || !free_v.is_empty());
            if !fits {
                waiting.push(v);
                continue;
            }
            if a.uses_tensor() {
                slots[v].tensor = free_t.pop_first();
            }
            if a.uses_vector() {
                slots[v].vector = free_v.pop_first();
            }
            start[v] = t;
            running.push(Reverse((t + tasks.latency(v), v)));
        }
        ready = waiting;

        let Some(&Reverse((next, _))) = running.peek() else {
            unreachable!("ready ops always fit on an idle machine");
        };
        t = next;
        while let Some(&Reverse((f, v))) = running.peek() {
            if f != t {
                break;
            }
            running.pop();
            done += 1;
            if let Some(i) = slots[v].tensor {
                free_t.insert(i);
            }
            if let Some(i) = slots[v].vector {
                free_v.insert(i);
            }
            for &s in tasks.succs(v) {
                pending[s] -= 1;
                if pending[s] == 0 {
                    ready_at[s] = t;
                    ready.push(s);
                }
            }
        }
    }

    let makespan = (0..n)
        .map(|v| start[v] + tasks.latency(v))
        .max()
        .unwrap_or(0);
    Ok(Schedule {
        ids: tasks.ids().to_vec(),
        latency: tasks.latencies().to_vec(),
        affinity: tasks.affinities().to_vec(),
        start,
        slots,
        ready: ready_at,
        makespan,
        counts,
    })
}

/// Memoized list scheduling over core counts.
///
/// Greedy list scheduling is not monotone in the number of cores (adding a
/// core can reorder starts and lengthen the makespan). A schedule for fewer
/// cores is still valid with more, so `schedule(c)` returns the best greedy
/// schedule over all counts dominated by `c`.
pub struct ScheduleCache<'a> {
    tasks: &'a TaskGraph,
    info: &'a CriticalInfo,
    greedy: HashMap<CoreCounts, Schedule>,
    best: HashMap<CoreCounts, CoreCounts>,
}

impl<'a> ScheduleCache<'a> {
    pub fn new(tasks: &'a TaskGraph, info: &'a CriticalInfo) -> Self {
        Self {
            tasks,
            info,
            greedy: HashMap::new(),
            best: HashMap::new(),
        }
    }

    fn greedy_makespan(&mut self, c: CoreCounts) -> u64 {
        if !self.greedy.contains_key(&c) {
            let s =
                greedy_list_schedule(self.tasks, self.info, c).expect("counts checked by caller");
            self.greedy.insert(c, s);
        }
        self.greedy[&c].makespan
    }

    fn best_source(&mut self, c: CoreCounts, floor: CoreCounts) -> CoreCounts {
        if let Some(&b) = self.best.get(&c) {
            return b;
        }
        let mut best = c;
        let mut best_ms = self.greedy_makespan(c);
        for ty in [CoreType::Tensor, CoreType::Vector] {
            if c.get(ty) > floor.get(ty) {
                let src = self.best_source(c.with(ty, c.get(ty) - 1), floor);
                let ms = self.greedy_makespan(src);
                if ms < best_ms {
                    best = src;
                    best_ms = ms;
                }
            }
        }
        self.best.insert(c, best);
        best
    }

    pub fn schedule(&mut self, counts: CoreCounts) -> Result<Schedule, ScheduleError> {
        check_counts(self.tasks, counts)?;
        let floor = self.tasks.minimum_counts();
        let cap = self.tasks.ops_needing();
        let effective =
            CoreCounts::new(counts.tensor.min(cap.tensor), counts.vector.min(cap.vector));
        let src = self.best_source(effective, floor);
        let mut s = self.greedy[&src].clone();
        s.counts = counts;
        Ok(s)
    }
}

/// Resource-constrained list schedule; makespan is non-increasing in `counts`.
pub fn list_schedule(
    tasks: &TaskGraph,
    info: &CriticalInfo,
    counts: CoreCounts,
) -> Result<Schedule, ScheduleError> {
    ScheduleCache::new(tasks, info).schedule(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::{compute_asap_alap, validate_schedule};

    fn diamond(aff: Affinity) -> TaskGraph {
        TaskGraph::new(
            ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect(),
            vec![1; 4],
            vec![aff; 4],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap()
    }

    /// Exhaustive oracle: every start-time vector within a horizon, checked for
    /// precedence and capacity; returns the minimum makespan.
    fn brute_force_makespan(tasks: &TaskGraph, cores: u32, horizon: u64) -> u64 {
        let n = tasks.len();
        let mut best = u64::MAX;
        let mut starts = vec![0u64; n];
        fn rec(
            v: usize,
            tasks: &TaskGraph,
            cores: u32,
            horizon: u64,
            starts: &mut Vec<u64>,
            best: &mut u64,
        ) {
            if v == tasks.len() {
                for &(a, b) in tasks.edges() {
                    if starts[b] < starts[a] + tasks.latency(a) {
                        return;
                    }
                }
                for t in 0..horizon {
                    let busy = (0..tasks.len())
                        .filter(|&u| starts[u] <= t && t < starts[u] + tasks.latency(u))
                        .count() as u32;
                    if busy > cores {
                        return;
                    }
                }
                let ms = (0..tasks.len())
                    .map(|u| starts[u] + tasks.latency(u))
                    .max()
                    .unwrap();
                *best = (*best).min(ms);
                return;
            }
            for s in 0..horizon {
                starts[v] = s;
                rec(v + 1, tasks, cores, horizon, starts, best);
            }
        }
        rec(0, tasks, cores, horizon, &mut starts, &mut best);
        let _ = n;
        best
    }

    #[test]
    fn diamond_one_core_serializes() {
        let t = diamond(Affinity::Tensor);
        let info = compute_asap_alap(&t);
        let s = list_schedule(&t, &info, CoreCounts::new(1, 0)).unwrap();
        assert_eq!(s.makespan, 4);
        assert_eq!(s.makespan, brute_force_makespan(&t, 1, 5));
        assert!(validate_schedule(&s, t.edges()).is_empty());
    }

    #[test]
    fn diamond_two_cores_hits_best_latency() {
        let t = diamond(Affinity::Tensor);
        let info = compute_asap_alap(&t);
        let s = list_schedule(&t, &info, CoreCounts::new(2, 0)).unwrap();
        assert_eq!(s.makespan, 3);
        assert_eq!(s.makespan, brute_force_makespan(&t, 2, 5));
        assert_eq!(s.makespan, info.best_latency);
    }

    #[test]
    fn vector_only_graph_needs_no_tensor_core() {
        let t = diamond(Affinity::Vector);
        let info = compute_asap_alap(&t);
        let s = list_schedule(&t, &info, CoreCounts::new(0, 1)).unwrap();
        assert_eq!(s.makespan, 4);
        assert!(s.slots.iter().all(|c| c.tensor.is_none()));
    }

    #[test]
    fn missing_core_type_is_an_error() {
        let t = diamond(Affinity::Both);
        let info = compute_asap_alap(&t);
        assert_eq!(
            list_schedule(&t, &info, CoreCounts::new(1, 0)).unwrap_err(),
            ScheduleError::NoCoreForAffinity(CoreType::Vector)
        );
    }

    #[test]
    fn both_affinity_holds_two_cores() {
        let t = diamond(Affinity::Both);
        let info = compute_asap_alap(&t);
        let s = list_schedule(&t, &info, CoreCounts::new(2, 1)).unwrap();
        // the single vector core serializes B and C
        assert_eq!(s.makespan, 4);
        assert!(validate_schedule(&s, t.edges()).is_empty());
    }
}
