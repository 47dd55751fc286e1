//! Conflict-driven search for the number of cores at fixed dimensions.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::arch::{within_budget, CoreDims, DesignPoint, SystemConfig};
use crate::metric::{cmp_metric, throughput, MetricSpec};

use super::{
    compute_asap_alap, parallelism_bound, CoreCounts, CoreType, Schedule, ScheduleCache,
    ScheduleError, TaskGraph,
};

/// One evaluated design with the schedule that produced its makespan.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub design: DesignPoint,
    pub makespan: u64,
    pub throughput: f64,
    pub metric: Option<f64>,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    NoConflict,
    BestLatency,
    Budget,
    ParallelismBound,
}

#[derive(Debug, Clone)]
pub struct HeuristicOutcome {
    /// Visited designs, best first.
    pub ranked: Vec<Candidate>,
    /// Visit order of the core counts.
    pub path: Vec<CoreCounts>,
    pub stop: StopReason,
    pub best_latency: u64,
    pub bound: CoreCounts,
}

impl HeuristicOutcome {
    pub fn best(&self) -> &Candidate {
        &self.ranked[0]
    }
}

/// Best metric first, then smaller area, then the smaller design tuple.
pub fn compare_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    cmp_metric(b.metric, a.metric)
        .then_with(|| a.design.area_mm2.total_cmp(&b.design.area_mm2))
        .then_with(|| a.design.tuple().cmp(&b.design.tuple()))
}

pub fn rank_candidates(c: &mut [Candidate]) {
    c.sort_by(compare_candidates);
}

pub(crate) fn make_candidate(
    schedule: Schedule,
    counts: CoreCounts,
    dims: CoreDims,
    cfg: &SystemConfig,
    metric: &MetricSpec,
    samples_per_iteration: u64,
) -> Result<Candidate, ScheduleError> {
    let design = DesignPoint::new(counts.tensor, dims, counts.vector, cfg)?;
    let thr = throughput(samples_per_iteration, cfg.clock_hz, schedule.makespan);
    Ok(Candidate {
        metric: metric.value(thr, design.tdp_watts),
        throughput: thr,
        makespan: schedule.makespan,
        design,
        schedule,
    })
}

/// Summed wait of conflicting ops, per core type. An op conflicts when it sat
/// waiting for a core (started after it became ready) and started after its
/// ALAP time, so it lies on a path that now exceeds the best latency. Any
/// schedule longer than the best latency has at least one such op.
fn conflict_waits(s: &Schedule, alap: &[u64]) -> (u64, u64) {
    let (mut t, mut v) = (0u64, 0u64);
    for (i, &late) in alap.iter().enumerate() {
        if s.start[i] <= late || s.start[i] <= s.ready[i] {
            continue;
        }
        let w = s.wait(i);
        if s.affinity[i].uses_tensor() {
            t += w;
        }
        if s.affinity[i].uses_vector() {
            v += w;
        }
    }
    (t, v)
}

/// Starts from one core of each type the graph needs and adds one core per
/// iteration to the type whose critical ops waited longest.
pub fn heuristic_core_search(
    tasks: &TaskGraph,
    dims: CoreDims,
    cfg: &SystemConfig,
    metric: &MetricSpec,
    samples_per_iteration: u64,
) -> Result<HeuristicOutcome, ScheduleError> {
    if tasks.is_empty() {
        return Err(ScheduleError::EmptyGraph);
    }
    let info = compute_asap_alap(tasks);
    let bound = parallelism_bound(tasks, &info);
    let mut counts = tasks.minimum_counts();
    let first = DesignPoint::new(counts.tensor, dims, counts.vector, cfg)?;
    if !within_budget(&first, cfg) {
        return Err(ScheduleError::InfeasibleBudget(format!(
            "{} needs {:.1} mm2 / {:.1} W",
            first.tuple(),
            first.area_mm2,
            first.tdp_watts
        )));
    }

    let mut cache = ScheduleCache::new(tasks, &info);
    let mut visited = Vec::new();
    let mut path = Vec::new();
    let stop = loop {
        let schedule = cache.schedule(counts)?;
        let (wt, wv) = conflict_waits(&schedule, &info.alap);
        let makespan = schedule.makespan;
        visited.push(make_candidate(
            schedule,
            counts,
            dims,
            cfg,
            metric,
            samples_per_iteration,
        )?);
        path.push(counts);

        if wt == 0 && wv == 0 {
            break StopReason::NoConflict;
        }
        if makespan == info.best_latency {
            break StopReason::BestLatency;
        }
        let order = if wv > wt {
            [(CoreType::Vector, wv), (CoreType::Tensor, wt)]
        } else {
            [(CoreType::Tensor, wt), (CoreType::Vector, wv)]
        };
        let Some(ty) = order
            .iter()
            .filter(|(ty, w)| *w > 0 && counts.get(*ty) < bound.get(*ty))
            .map(|(ty, _)| *ty)
            .next()
        else {
            break StopReason::ParallelismBound;
        };
        let next = counts.with(ty, counts.get(ty) + 1);
        let design = DesignPoint::new(next.tensor, dims, next.vector, cfg)?;
        if !within_budget(&design, cfg) {
            break StopReason::Budget;
        }
        counts = next;
    };

    rank_candidates(&mut visited);
    Ok(HeuristicOutcome {
        ranked: visited,
        path,
        stop,
        best_latency: info.best_latency,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Affinity;
    use crate::sched::validate_schedule;

    fn tg(lat: &[u64], aff: &[Affinity], edges: &[(usize, usize)]) -> TaskGraph {
        let ids = (0..lat.len())
            .map(|i| ((b'A' + i as u8) as char).to_string())
            .collect();
        TaskGraph::new(ids, lat.to_vec(), aff.to_vec(), edges).unwrap()
    }

    const DIAMOND: [(usize, usize); 4] = [(0, 1), (0, 2), (1, 3), (2, 3)];
    const DIMS: CoreDims = CoreDims::new(128, 128, 128);

    #[test]
    fn diamond_adds_one_tensor_core() {
        let t = tg(&[1; 4], &[Affinity::Tensor; 4], &DIAMOND);
        let out = heuristic_core_search(
            &t,
            DIMS,
            &SystemConfig::default(),
            &MetricSpec::throughput(),
            1,
        )
        .unwrap();
        assert_eq!(out.path, vec![CoreCounts::new(1, 0), CoreCounts::new(2, 0)]);
        assert_eq!(out.stop, StopReason::NoConflict);
        assert_eq!(out.best().makespan, 3);
        assert_eq!(out.best().design.num_tc, 2);
        for c in &out.ranked {
            assert!(validate_schedule(&c.schedule, t.edges()).is_empty());
        }
    }

    #[test]
    fn chain_never_grows() {
        let t = tg(
            &[2, 3, 1],
            &[Affinity::Tensor, Affinity::Vector, Affinity::Tensor],
            &[(0, 1), (1, 2)],
        );
        let out = heuristic_core_search(
            &t,
            DIMS,
            &SystemConfig::default(),
            &MetricSpec::throughput(),
            1,
        )
        .unwrap();
        assert_eq!(out.path, vec![CoreCounts::new(1, 1)]);
        assert_eq!(out.best().makespan, 6);
    }

    #[test]
    fn tight_budget_stops_at_first_design() {
        let t = tg(&[1; 4], &[Affinity::Tensor; 4], &DIAMOND);
        let mut cfg = SystemConfig::default();
        let one = DesignPoint::new(1, DIMS, 0, &cfg).unwrap();
        cfg.area_budget_mm2 = one.area_mm2;
        let out = heuristic_core_search(&t, DIMS, &cfg, &MetricSpec::throughput(), 1).unwrap();
        assert_eq!(out.stop, StopReason::Budget);
        assert_eq!(out.ranked.len(), 1);
        assert_eq!(out.best().makespan, 4);
    }

    #[test]
    fn budget_below_one_core_is_infeasible() {
        let t = tg(&[1], &[Affinity::Tensor], &[]);
        let cfg = SystemConfig {
            area_budget_mm2: 1.0,
            ..SystemConfig::default()
        };
        let err = heuristic_core_search(&t, DIMS, &cfg, &MetricSpec::throughput(), 1).unwrap_err();
        assert!(matches!(err, ScheduleError::InfeasibleBudget(_)));
    }

    #[test]
    fn wide_fan_out_respects_bound() {
        // A feeds six independent ops; bound is 6 tensor cores
        let mut edges = Vec::new();
        for i in 1..7 {
            edges.push((0, i));
        }
        let t = tg(&[1; 7], &[Affinity::Tensor; 7], &edges);
        let out = heuristic_core_search(
            &t,
            DIMS,
            &SystemConfig::default(),
            &MetricSpec::throughput(),
            1,
        )
        .unwrap();
        assert!(out.path.iter().all(|c| c.tensor <= out.bound.tensor));
        assert_eq!(out.best().makespan, out.best_latency);
    }
}
