use std::collections::BTreeMap;

use serde::Serialize;

use crate::arch::{CoreDims, SystemConfig};
use crate::metric::MetricSpec;
use crate::par;

use super::pruner::{DimTree, NodeOracle, NodeState, Sweep, TraceRecord};
use super::{
    evaluate_dims, DimsEval, EngineNote, Scored, SearchError, SearchOptions, TopK, Workload,
};

#[derive(Debug, Clone, Serialize)]
pub struct LocalResult {
    pub topk: TopK,
    /// Distinct dimensions evaluated.
    pub visited: usize,
    /// Size of the full dimension space under the same root and minimum.
    pub space: usize,
    pub pruned_subtrees: usize,
    pub rounds: u32,
    pub best_dims: Option<CoreDims>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub evaluations: BTreeMap<CoreDims, DimsEval>,
}

impl LocalResult {
    /// Engine notes for ILP runs that timed out and fell back.
    pub fn fallbacks(&self) -> Vec<(CoreDims, EngineNote)> {
        self.evaluations
            .iter()
            .flat_map(|(d, e)| {
                e.engine
                    .iter()
                    .filter(|n| n.fallback)
                    .map(|n| (*d, n.clone()))
            })
            .collect()
    }
}

/// Halving ladder from `top` down to `min`.
fn ladder(top: u32, min: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut x = top;
    while x >= min && x > 0 {
        out.push(x);
        x /= 2;
    }
    out
}

/// Every dimension reachable from `root` by halving, largest first.
pub fn dims_space(root: CoreDims, min_dim: u32) -> Vec<CoreDims> {
    let mut out = Vec::new();
    for &r in &ladder(root.tc_rows, min_dim) {
        for &c in &ladder(root.tc_cols, min_dim) {
            for &w in &ladder(root.vc_width, min_dim) {
                out.push(CoreDims::new(r, c, w));
            }
        }
    }
    out
}

struct Evaluator<'a> {
    workloads: &'a [Workload],
    cfg: &'a SystemConfig,
    metric: &'a MetricSpec,
    opts: &'a SearchOptions,
    cache: BTreeMap<CoreDims, DimsEval>,
    error: Option<SearchError>,
}

impl NodeOracle for Evaluator<'_> {
    fn evaluate(&mut self, dims: &[CoreDims]) {
        let todo: Vec<CoreDims> = dims
            .iter()
            .copied()
            .filter(|d| !self.cache.contains_key(d))
            .collect();
        let (w, c, m, o) = (self.workloads, self.cfg, self.metric, self.opts);
        let results = par::map(o.exec, &todo, |d| evaluate_dims(*d, w, c, m, o));
        for (d, r) in todo.into_iter().zip(results) {
            match r {
                Ok(e) => {
                    self.cache.insert(d, e);
                }
                Err(e) => {
                    self.error.get_or_insert(e);
                    let dead = DimsEval {
                        dims: d,
                        feasible: false,
                        metric: None,
                        designs: Vec::new(),
                        engine: Vec::new(),
                    };
                    self.cache.insert(d, dead);
                }
            }
        }
    }

    fn state(&self, d: CoreDims) -> NodeState {
        match self.cache.get(&d) {
            None => NodeState::Unevaluated,
            Some(e) if e.feasible => NodeState::Evaluated(e.metric),
            Some(_) => NodeState::Infeasible,
        }
    }

    fn best_counts(&self, d: CoreDims) -> Option<(u32, u32)> {
        let b = self.cache.get(&d)?.best()?;
        Some((b.design.num_tc, b.design.num_vc))
    }
}

impl Evaluator<'_> {
    fn best_dims(&self) -> Option<CoreDims> {
        self.cache
            .values()
            .filter_map(|e| e.best())
            .min_by(|a, b| a.cmp_rank(b))
            .map(|s| s.design.dims)
    }
}

fn finish(
    ev: Evaluator<'_>,
    k: usize,
    space: usize,
    pruned: usize,
    rounds: u32,
    trace: Vec<TraceRecord>,
) -> Result<LocalResult, SearchError> {
    if let Some(e) = ev.error {
        return Err(e);
    }
    let best_dims = ev.best_dims();
    let designs: Vec<Scored> = ev
        .cache
        .values()
        .flat_map(|e| e.designs.iter().cloned())
        .collect();
    if designs.is_empty() {
        return Err(SearchError::InfeasibleBudget(
            "no core dimensions admit a design within budget".into(),
        ));
    }
    Ok(LocalResult {
        topk: TopK::from_designs(k, designs),
        visited: ev.cache.len(),
        space,
        pruned_subtrees: pruned,
        rounds,
        best_dims,
        trace,
        evaluations: ev.cache,
    })
}

fn check(
    workloads: &[Workload],
    metric: &MetricSpec,
    k: usize,
    opts: &SearchOptions,
) -> Result<(), SearchError> {
    if workloads.is_empty() {
        return Err(SearchError::NoWorkloads);
    }
    if k == 0 {
        return Err(SearchError::InvalidOptions("k must be at least 1".into()));
    }
    metric.validate().map_err(SearchError::InvalidOptions)?;
    opts.validate()
}

/// Pruned search: a TC-dimension sweep with the vector width fixed, then a
/// vector-width sweep at the best TC dimensions, repeated until the best
/// dimensions stop changing. With several workloads the metric is their
/// weighted average.
pub fn local_search(
    workloads: &[Workload],
    cfg: &SystemConfig,
    metric: &MetricSpec,
    k: usize,
    opts: &SearchOptions,
) -> Result<LocalResult, SearchError> {
    check(workloads, metric, k, opts)?;
    let mut ev = Evaluator {
        workloads,
        cfg,
        metric,
        opts,
        cache: BTreeMap::new(),
        error: None,
    };
    let mut tree = DimTree::new(opts.min_dim, opts.hysteresis_levels);
    let root = opts.root;
    let mut vc = root.vc_width;
    let mut rounds = 0;
    for round in 0..opts.max_rounds {
        rounds = round + 1;
        tree.walk(
            CoreDims::new(root.tc_rows, root.tc_cols, vc),
            Sweep::Tc,
            round,
            &mut ev,
        );
        let Some(best) = ev.best_dims() else { break };
        tree.walk(
            CoreDims::new(best.tc_rows, best.tc_cols, root.vc_width),
            Sweep::Vc,
            round,
            &mut ev,
        );
        let Some(best) = ev.best_dims() else { break };
        if best.vc_width == vc || ev.error.is_some() {
            break;
        }
        vc = best.vc_width;
    }
    let pruned = tree.pruned_count();
    let space = dims_space(root, opts.min_dim).len();
    finish(ev, k, space, pruned, rounds, tree.into_trace())
}

/// Unpruned reference: every dimension in the space is evaluated.
pub fn exhaustive_sweep(
    workloads: &[Workload],
    cfg: &SystemConfig,
    metric: &MetricSpec,
    k: usize,
    opts: &SearchOptions,
) -> Result<LocalResult, SearchError> {
    check(workloads, metric, k, opts)?;
    let mut ev = Evaluator {
        workloads,
        cfg,
        metric,
        opts,
        cache: BTreeMap::new(),
        error: None,
    };
    let all = dims_space(opts.root, opts.min_dim);
    ev.evaluate(&all);
    let trace = all
        .iter()
        .enumerate()
        .map(|(i, d)| TraceRecord {
            seq: i,
            sweep: Sweep::Exhaustive,
            round: 0,
            node: d.to_string(),
            parent: None,
            dims: *d,
            counts: ev.best_counts(*d),
            metric: match ev.state(*d) {
                NodeState::Evaluated(m) => m,
                _ => None,
            },
            decision: "evaluate",
        })
        .collect();
    finish(ev, k, all.len(), 0, 1, trace)
}
