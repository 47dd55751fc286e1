use std::collections::BTreeSet;

use serde::Serialize;

use crate::arch::{within_budget, CoreDims, DesignPoint, SystemConfig};
use crate::cost::annotate;
use crate::ilp::{build_instance, solve, SolveStatus};
use crate::metric::{throughput, MetricSpec};
use crate::sched::{
    compute_asap_alap, heuristic_core_search, CoreCounts, CriticalInfo, Schedule, ScheduleCache,
    ScheduleError, TaskGraph,
};

use super::{Engine, SearchError, SearchOptions, Workload};

#[derive(Debug, Clone, Serialize)]
pub struct WorkloadScore {
    pub workload: String,
    pub makespan_cycles: u64,
    pub throughput: f64,
    pub metric: Option<f64>,
    #[serde(skip)]
    pub schedule: Schedule,
}

/// A design scored on every workload of the search.
#[derive(Debug, Clone, Serialize)]
pub struct Scored {
    pub design: DesignPoint,
    /// Weighted average over workloads; `None` if any workload fails the floor.
    pub metric: Option<f64>,
    pub workloads: Vec<WorkloadScore>,
}

impl Scored {
    pub fn cmp_rank(&self, other: &Self) -> std::cmp::Ordering {
        crate::metric::cmp_metric(other.metric, self.metric)
            .then_with(|| self.design.area_mm2.total_cmp(&other.design.area_mm2))
            .then_with(|| self.design.tuple().cmp(&other.design.tuple()))
    }
}

/// How the core-count engine behaved for one workload at one dims.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineNote {
    pub workload: String,
    pub engine: Engine,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ilp_status: Option<SolveStatus>,
    /// The ILP timed out and the heuristic result was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimsEval {
    pub dims: CoreDims,
    /// False when not even one core of each needed type fits the budget.
    pub feasible: bool,
    /// Best metric over the designs evaluated at these dims.
    pub metric: Option<f64>,
    /// Ranked, best first.
    pub designs: Vec<Scored>,
    pub engine: Vec<EngineNote>,
}

impl DimsEval {
    pub fn best(&self) -> Option<&Scored> {
        self.designs.first()
    }
}

struct Prepared {
    tasks: TaskGraph,
    info: CriticalInfo,
}

fn ilp_schedule(
    tasks: &TaskGraph,
    dims: CoreDims,
    cfg: &SystemConfig,
    opts: &SearchOptions,
) -> (SolveStatus, Option<(CoreCounts, Schedule)>) {
    match build_instance(tasks, dims, cfg, None) {
        Ok(inst) => {
            let sol = solve(&inst, opts.limits);
            let found = match sol.status {
                SolveStatus::Optimal => sol.to_schedule(&inst).map(|s| (sol.x, s)),
                _ => None,
            };
            (sol.status, found)
        }
        Err(_) => (SolveStatus::Infeasible, None),
    }
}

/// Annotates every workload at `dims`, runs the core-count engine and scores
/// the resulting designs. With several workloads, every core-count vector any
/// workload's engine visited is scored on all of them.
pub fn evaluate_dims(
    dims: CoreDims,
    workloads: &[Workload],
    cfg: &SystemConfig,
    metric: &MetricSpec,
    opts: &SearchOptions,
) -> Result<DimsEval, SearchError> {
    if workloads.is_empty() {
        return Err(SearchError::NoWorkloads);
    }
    let infeasible = || DimsEval {
        dims,
        feasible: false,
        metric: None,
        designs: Vec::new(),
        engine: Vec::new(),
    };
    let prepared: Vec<Prepared> = workloads
        .iter()
        .map(|w| {
            let tasks = annotate(&w.graph, dims, cfg).tasks();
            let info = compute_asap_alap(&tasks);
            Prepared { tasks, info }
        })
        .collect();

    let mut counts: BTreeSet<CoreCounts> = BTreeSet::new();
    let mut notes = Vec::new();
    let mut exact: Vec<Option<(CoreCounts, Schedule)>> = vec![None; workloads.len()];
    for (i, (w, p)) in workloads.iter().zip(&prepared).enumerate() {
        let mut note = EngineNote {
            workload: w.name.clone(),
            engine: opts.engine,
            ilp_status: None,
            fallback: false,
        };
        if opts.engine == Engine::Ilp {
            let (status, found) = ilp_schedule(&p.tasks, dims, cfg, opts);
            note.ilp_status = Some(status);
            match (status, found) {
                (SolveStatus::Optimal, Some((x, sched))) => {
                    counts.insert(x);
                    exact[i] = Some((x, sched));
                    notes.push(note);
                    continue;
                }
                (SolveStatus::Infeasible, _) => return Ok(infeasible()),
                _ => note.fallback = true,
            }
        }
        match heuristic_core_search(&p.tasks, dims, cfg, metric, w.samples_per_iteration) {
            Ok(out) => counts.extend(out.path),
            Err(ScheduleError::InfeasibleBudget(_)) => return Ok(infeasible()),
            Err(e) => return Err(e.into()),
        }
        notes.push(note);
    }

    // every design must carry the core types any workload needs
    let floor = prepared.iter().fold(CoreCounts::default(), |acc, p| {
        let m = p.tasks.minimum_counts();
        CoreCounts::new(acc.tensor.max(m.tensor), acc.vector.max(m.vector))
    });
    let counts: BTreeSet<CoreCounts> = counts
        .into_iter()
        .map(|c| CoreCounts::new(c.tensor.max(floor.tensor), c.vector.max(floor.vector)))
        .collect();

    let mut caches: Vec<ScheduleCache<'_>> = prepared
        .iter()
        .map(|p| ScheduleCache::new(&p.tasks, &p.info))
        .collect();
    let mut designs = Vec::new();
    for c in counts {
        let design = DesignPoint::new(c.tensor, dims, c.vector, cfg)?;
        if !within_budget(&design, cfg) {
            continue;
        }
        let mut scores = Vec::with_capacity(workloads.len());
        for ((w, cache), ex) in workloads.iter().zip(caches.iter_mut()).zip(&exact) {
            let mut schedule = cache.schedule(c)?;
            if let Some((x, s)) = ex {
                if x.dominated_by(&c) && s.makespan < schedule.makespan {
                    schedule = Schedule {
                        counts: c,
                        ..s.clone()
                    };
                }
            }
            let thr = throughput(w.samples_per_iteration, cfg.clock_hz, schedule.makespan);
            scores.push(WorkloadScore {
                workload: w.name.clone(),
                makespan_cycles: schedule.makespan,
                throughput: thr,
                metric: metric.value(thr, design.tdp_watts),
                schedule,
            });
        }
        let combined = weighted(metric, &scores);
        designs.push(Scored {
            design,
            metric: combined,
            workloads: scores,
        });
    }
    if designs.is_empty() {
        return Ok(infeasible());
    }
    designs.sort_by(Scored::cmp_rank);
    Ok(DimsEval {
        dims,
        feasible: true,
        metric: designs[0].metric,
        designs,
        engine: notes,
    })
}

pub(crate) fn weighted(metric: &MetricSpec, scores: &[WorkloadScore]) -> Option<f64> {
    let n = scores.len();
    let mut total = 0.0;
    for s in scores {
        total += metric.weight(&s.workload, n) * s.metric?;
    }
    Some(total)
}
