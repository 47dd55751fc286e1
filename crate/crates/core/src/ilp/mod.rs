//! Time-indexed formulation of joint core-count and schedule optimization,
//! solved exactly by an in-repo branch and bound.
//!
//! Objectives are lexicographic: first the makespan (start slot of a
//! synthetic zero-length sink), then `area / area_budget + power /
//! power_budget` over the core counts that reach it.

mod bnb;
pub mod lp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{CoreDims, SystemConfig, UnitCosts};
use crate::cost::AnnotatedGraph;
use crate::sched::{
    compute_asap_alap, greedy_list_schedule, parallelism_bound, CoreCounts, CoreSlot, Schedule,
    ScheduleError, TaskGraph,
};

use bnb::{min_makespan, tails, NodeCounter};

/// Largest horizon, in slots, the slot granularity aims for.
pub const MAX_SLOTS: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IlpError {
    #[error("horizon of {horizon} slots is shorter than the critical path ({needed} slots)")]
    HorizonTooSmall { horizon: u64, needed: u64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveLimits {
    /// Search nodes across all core-count candidates before giving up.
    pub node_budget: u64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            node_budget: 2_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlpInstance {
    /// Ops with durations in slots.
    pub tasks: TaskGraph,
    /// Original durations in cycles.
    pub cycles: Vec<u64>,
    pub slot_cycles: u64,
    pub horizon: u64,
    pub critical_path: u64,
    pub dims: CoreDims,
    pub unit: UnitCosts,
    pub area_budget: f64,
    pub power_budget: f64,
    /// Upper end of the core-count range per type.
    pub bound: CoreCounts,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Cycles per slot: the gcd of all latencies, coarsened so the serial
/// schedule fits in [`MAX_SLOTS`].
pub fn slot_granularity(latencies: &[u64]) -> u64 {
    let g = latencies
        .iter()
        .copied()
        .filter(|&l| l > 0)
        .fold(0, gcd)
        .max(1);
    let serial: u64 = latencies.iter().sum();
    g.max(serial.div_ceil(MAX_SLOTS))
}

impl IlpInstance {
    /// Start-variable count `sum_v (T - dur_v + 1)`, excluding the sink.
    pub fn num_y_vars(&self) -> u64 {
        self.tasks
            .latencies()
            .iter()
            .map(|&d| self.horizon + 1 - d)
            .sum()
    }

    /// Sink start variables `t = 0..=T`.
    pub fn num_sink_vars(&self) -> u64 {
        self.horizon + 1
    }

    pub fn serial_slots(&self) -> u64 {
        self.tasks.serial_sum()
    }

    /// Core-count vectors inside the bound and the budget, in lexicographic order.
    pub fn feasible_counts(&self) -> Vec<CoreCounts> {
        let range = |used: bool, hi: u32| if used { 1..=hi } else { 0..=0 };
        let mut out = Vec::new();
        for t in range(self.tasks.uses_tensor(), self.bound.tensor) {
            for v in range(self.tasks.uses_vector(), self.bound.vector) {
                if self.unit.area(t, v) <= self.area_budget
                    && self.unit.power(t, v) <= self.power_budget
                {
                    out.push(CoreCounts::new(t, v));
                }
            }
        }
        out
    }

    /// Second objective: budget-normalized area plus power.
    pub fn cost(&self, x: CoreCounts) -> f64 {
        self.unit.area(x.tensor, x.vector) / self.area_budget
            + self.unit.power(x.tensor, x.vector) / self.power_budget
    }
}

/// Builds the instance for a task graph with latencies in cycles. `horizon`
/// is in slots; `None` takes the serial sum, which is always feasible.
pub fn build_instance(
    tasks: &TaskGraph,
    dims: CoreDims,
    cfg: &SystemConfig,
    horizon: Option<u64>,
) -> Result<IlpInstance, IlpError> {
    let g = slot_granularity(tasks.latencies());
    let slots: Vec<u64> = tasks
        .latencies()
        .iter()
        .map(|&l| l.div_ceil(g).max(1))
        .collect();
    let slotted = tasks.with_latencies(slots);
    let info = compute_asap_alap(&slotted);
    let needed = info.best_latency;
    let horizon = horizon.unwrap_or_else(|| slotted.serial_sum());
    if horizon < needed {
        return Err(IlpError::HorizonTooSmall { horizon, needed });
    }
    let mut bound = parallelism_bound(&slotted, &info);
    let floor = slotted.minimum_counts();
    bound = CoreCounts::new(
        bound.tensor.max(floor.tensor),
        bound.vector.max(floor.vector),
    );
    Ok(IlpInstance {
        tasks: slotted,
        cycles: tasks.latencies().to_vec(),
        slot_cycles: g,
        horizon,
        critical_path: needed,
        dims,
        unit: UnitCosts::new(dims, cfg),
        area_budget: cfg.area_budget_mm2,
        power_budget: cfg.power_budget_w,
        bound,
    })
}

pub fn build_instance_for(
    ag: &AnnotatedGraph,
    cfg: &SystemConfig,
    horizon: Option<u64>,
) -> Result<IlpInstance, IlpError> {
    build_instance(&ag.tasks(), ag.dims, cfg, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpSolution {
    pub status: SolveStatus,
    pub x: CoreCounts,
    /// Start slot per op, in task index order.
    pub starts: Vec<u64>,
    /// Sink start, in slots.
    pub objective_makespan: u64,
    pub slot_cycles: u64,
    pub cost: f64,
    pub nodes: u64,
}

impl IlpSolution {
    pub fn makespan_cycles(&self, inst: &IlpInstance) -> u64 {
        (0..self.starts.len())
            .map(|v| self.starts[v] * self.slot_cycles + inst.cycles[v])
            .max()
            .unwrap_or(0)
    }

    /// The `y` variables set to one: `(op id, start slot)`.
    pub fn y(&self, inst: &IlpInstance) -> BTreeMap<String, u64> {
        (0..self.starts.len())
            .map(|v| (inst.tasks.id(v).to_string(), self.starts[v]))
            .collect()
    }

    /// Schedule in cycles with concrete core indices.
    pub fn to_schedule(&self, inst: &IlpInstance) -> Option<Schedule> {
        if self.status == SolveStatus::Infeasible || self.starts.len() != inst.tasks.len() {
            return None;
        }
        let t = &inst.tasks;
        let n = t.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&v| (self.starts[v], v));
        let mut slots = vec![CoreSlot::default(); n];
        // busy-until per core index, in slots
        let mut tc = vec![0u64; self.x.tensor as usize];
        let mut vc = vec![0u64; self.x.vector as usize];
        let take = |pool: &mut Vec<u64>, s: u64, f: u64| -> Option<u32> {
            let i = pool.iter().position(|&busy| busy <= s)?;
            pool[i] = f;
            Some(i as u32)
        };
        for v in order {
            let (s, f) = (self.starts[v], self.starts[v] + t.latency(v));
            let a = t.affinity(v);
            if a.uses_tensor() {
                slots[v].tensor = Some(take(&mut tc, s, f)?);
            }
            if a.uses_vector() {
                slots[v].vector = Some(take(&mut vc, s, f)?);
            }
        }
        let g = self.slot_cycles;
        let start: Vec<u64> = self.starts.iter().map(|&s| s * g).collect();
        let ready = (0..n)
            .map(|v| {
                t.preds(v)
                    .iter()
                    .map(|&p| start[p] + inst.cycles[p])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let makespan = (0..n).map(|v| start[v] + inst.cycles[v]).max().unwrap_or(0);
        Some(Schedule {
            ids: t.ids().to_vec(),
            latency: inst.cycles.clone(),
            affinity: t.affinities().to_vec(),
            start,
            slots,
            ready,
            makespan,
            counts: self.x,
        })
    }
}

/// Pluggable backend for the instance; the in-repo branch and bound is the
/// default, an external MILP solver can implement the same trait.
pub trait IlpSolver {
    fn solve(&self, inst: &IlpInstance, limits: SolveLimits) -> IlpSolution;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BranchAndBound;

impl IlpSolver for BranchAndBound {
    fn solve(&self, inst: &IlpInstance, limits: SolveLimits) -> IlpSolution {
        solve(inst, limits)
    }
}

fn greedy_starts(inst: &IlpInstance, x: CoreCounts) -> Option<(u64, Vec<u64>)> {
    let info = compute_asap_alap(&inst.tasks);
    let s = greedy_list_schedule(&inst.tasks, &info, x).ok()?;
    Some((s.makespan, s.start))
}

/// Exact lexicographic optimum: minimum makespan over all budget-feasible
/// core counts, then the cheapest counts reaching it (ties go to the
/// lexicographically smaller counts).
pub fn solve(inst: &IlpInstance, limits: SolveLimits) -> IlpSolution {
    let empty = |status| IlpSolution {
        status,
        x: CoreCounts::default(),
        starts: Vec::new(),
        objective_makespan: 0,
        slot_cycles: inst.slot_cycles,
        cost: 0.0,
        nodes: 0,
    };
    if inst.tasks.is_empty() {
        return empty(SolveStatus::Optimal);
    }
    let xs = inst.feasible_counts();
    if xs.is_empty() {
        return empty(SolveStatus::Infeasible);
    }
    let tail = tails(&inst.tasks);
    let mut nodes = NodeCounter {
        used: 0,
        budget: limits.node_budget,
    };
    let maximal: Vec<CoreCounts> = xs
        .iter()
        .copied()
        .filter(|x| !xs.iter().any(|y| y != x && x.dominated_by(y)))
        .collect();

    // Phase 1: best makespan, reached at some maximal count vector.
    let mut best: Option<(u64, CoreCounts, Vec<u64>)> = None;
    let mut timed_out = false;
    for &x in &maximal {
        let mut cutoff = best.as_ref().map_or(inst.horizon + 1, |b| b.0);
        if let Some((ms, starts)) = greedy_starts(inst, x) {
            if ms < cutoff {
                best = Some((ms, x, starts));
                cutoff = ms;
            }
        }
        let out = min_makespan(&inst.tasks, x, &tail, cutoff, &mut nodes);
        if let Some((ms, starts)) = out.best {
            best = Some((ms, x, starts));
        }
        if out.timed_out {
            timed_out = true;
            break;
        }
    }
    let Some((target, mut x_best, mut starts_best)) = best else {
        let mut s = empty(if timed_out {
            SolveStatus::Timeout
        } else {
            SolveStatus::Infeasible
        });
        s.nodes = nodes.used;
        return s;
    };

    // Phase 2: cheapest counts that still reach the target makespan.
    if !timed_out {
        let mut by_cost = xs.clone();
        by_cost.sort_by(|a, b| inst.cost(*a).total_cmp(&inst.cost(*b)).then(a.cmp(b)));
        for x in by_cost {
            if x == x_best {
                break;
            }
            if let Some((ms, starts)) = greedy_starts(inst, x) {
                if ms <= target {
                    x_best = x;
                    starts_best = starts;
                    break;
                }
            }
            let out = min_makespan(&inst.tasks, x, &tail, target + 1, &mut nodes);
            if let Some((_, starts)) = out.best {
                x_best = x;
                starts_best = starts;
                break;
            }
            if out.timed_out {
                timed_out = true;
                break;
            }
        }
    }
    let makespan = (0..starts_best.len())
        .map(|v| starts_best[v] + inst.tasks.latency(v))
        .max()
        .unwrap_or(0);
    IlpSolution {
        status: if timed_out {
            SolveStatus::Timeout
        } else {
            SolveStatus::Optimal
        },
        x: x_best,
        starts: starts_best,
        objective_makespan: makespan,
        slot_cycles: inst.slot_cycles,
        cost: inst.cost(x_best),
        nodes: nodes.used,
    }
}

/// Smallest horizon, in slots, for which some budget-feasible core count
/// admits a schedule; binary search between the critical path and the
/// serial sum. `None` when no core count fits the budget.
pub fn min_horizon(inst: &IlpInstance, limits: SolveLimits) -> Option<u64> {
    let xs = inst.feasible_counts();
    let maximal: Vec<CoreCounts> = xs
        .iter()
        .copied()
        .filter(|x| !xs.iter().any(|y| y != x && x.dominated_by(y)))
        .collect();
    if maximal.is_empty() {
        return None;
    }
    if inst.tasks.is_empty() {
        return Some(0);
    }
    let tail = tails(&inst.tasks);
    let mut nodes = NodeCounter {
        used: 0,
        budget: limits.node_budget,
    };
    let mut feasible = |t: u64| {
        maximal.iter().any(|&x| {
            greedy_starts(inst, x).is_some_and(|(ms, _)| ms <= t)
                || min_makespan(&inst.tasks, x, &tail, t + 1, &mut nodes)
                    .best
                    .is_some()
        })
    };
    let (mut lo, mut hi) = (inst.critical_path, inst.serial_slots());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::DesignPoint;
    use crate::graph::Affinity;
    use crate::sched::validate_schedule;

    const DIMS: CoreDims = CoreDims::new(128, 128, 128);

    fn tg(lat: &[u64], aff: Affinity, edges: &[(usize, usize)]) -> TaskGraph {
        let ids = (0..lat.len())
            .map(|i| ((b'A' + i as u8) as char).to_string())
            .collect();
        TaskGraph::new(ids, lat.to_vec(), vec![aff; lat.len()], edges).unwrap()
    }

    fn diamond() -> TaskGraph {
        tg(&[1; 4], Affinity::Tensor, &[(0, 1), (0, 2), (1, 3), (2, 3)])
    }

    fn cfg_allowing_tc(n: u32) -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.area_budget_mm2 = DesignPoint::new(n, DIMS, 0, &cfg).unwrap().area_mm2;
        cfg
    }

    #[test]
    fn chain_variable_count() {
        let t = tg(&[1, 1, 1], Affinity::Tensor, &[(0, 1), (1, 2)]);
        let inst = build_instance(&t, DIMS, &SystemConfig::default(), Some(3)).unwrap();
        assert_eq!(inst.num_y_vars(), 9);
        assert_eq!(inst.num_sink_vars(), 4);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let t = tg(&[1, 1, 1], Affinity::Tensor, &[(0, 1), (1, 2)]);
        assert_eq!(
            build_instance(&t, DIMS, &SystemConfig::default(), Some(2)).unwrap_err(),
            IlpError::HorizonTooSmall {
                horizon: 2,
                needed: 3
            }
        );
    }

    #[test]
    fn empty_graph_is_trivially_optimal() {
        let t = tg(&[], Affinity::Tensor, &[]);
        let inst = build_instance(&t, DIMS, &SystemConfig::default(), None).unwrap();
        let s = solve(&inst, SolveLimits::default());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.objective_makespan, 0);
    }

    #[test]
    fn diamond_two_cores() {
        let inst = build_instance(&diamond(), DIMS, &cfg_allowing_tc(2), None).unwrap();
        let s = solve(&inst, SolveLimits::default());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!((s.x, s.objective_makespan), (CoreCounts::new(2, 0), 3));
        let sched = s.to_schedule(&inst).unwrap();
        assert!(validate_schedule(&sched, inst.tasks.edges()).is_empty());
        assert_eq!(min_horizon(&inst, SolveLimits::default()), Some(3));
    }

    #[test]
    fn diamond_one_core() {
        let inst = build_instance(&diamond(), DIMS, &cfg_allowing_tc(1), None).unwrap();
        let s = solve(&inst, SolveLimits::default());
        assert_eq!((s.x, s.objective_makespan), (CoreCounts::new(1, 0), 4));
        assert_eq!(min_horizon(&inst, SolveLimits::default()), Some(4));
    }

    #[test]
    fn chain_prefers_one_core() {
        let t = tg(&[2, 3, 1], Affinity::Tensor, &[(0, 1), (1, 2)]);
        let inst = build_instance(&t, DIMS, &SystemConfig::default(), None).unwrap();
        let s = solve(&inst, SolveLimits::default());
        assert_eq!(s.x, CoreCounts::new(1, 0));
        assert_eq!(s.objective_makespan, 6);
        assert_eq!(min_horizon(&inst, SolveLimits::default()), Some(6));
    }

    #[test]
    fn slots_use_gcd() {
        let t = tg(&[4, 6, 2], Affinity::Tensor, &[(0, 1)]);
        let inst = build_instance(&t, DIMS, &SystemConfig::default(), None).unwrap();
        assert_eq!(inst.slot_cycles, 2);
        assert_eq!(inst.tasks.latencies(), &[2, 3, 1]);
        let s = solve(&inst, SolveLimits::default());
        assert_eq!(s.makespan_cycles(&inst), 10);
    }

    #[test]
    fn horizon_below_budget_optimum_is_infeasible() {
        let inst = build_instance(&diamond(), DIMS, &cfg_allowing_tc(1), Some(3)).unwrap();
        assert_eq!(
            solve(&inst, SolveLimits::default()).status,
            SolveStatus::Infeasible
        );
    }

    #[test]
    fn tiny_node_budget_times_out() {
        let edges: Vec<(usize, usize)> = (1..9).map(|i| (0, i)).collect();
        let t = tg(&[3, 1, 2, 3, 1, 2, 3, 1, 2], Affinity::Tensor, &edges);
        let inst = build_instance(&t, DIMS, &SystemConfig::default(), None).unwrap();
        let s = solve(&inst, SolveLimits { node_budget: 3 });
        assert_eq!(s.status, SolveStatus::Timeout);
    }
}
