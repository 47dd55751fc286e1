//! Global search over per-stage candidates: one design for every model
//! (common), one homogeneous design per model (individual) and the per-stage
//! top-1 composition (mosaic).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::arch::{DesignPoint, DesignTuple, SystemConfig};
use crate::cost::annotate;
use crate::graph::{apply_fusion, build_training_graph, OperatorGraph, TrainingOptions};
use crate::metric::{better, cmp_metric, MetricSpec};
use crate::par::{self, ExecMode};
use crate::sched::{compute_asap_alap, list_schedule, CoreCounts};
use crate::search::{local_search, LocalResult, SearchError, SearchOptions, Workload};

use super::{
    apply_tmp, bottleneck_time, partition_model, pipeline_iteration_time, PipelineError,
    PipelineParams, StagePartition,
};

#[derive(Debug, Clone)]
pub struct ModelInput {
    pub name: String,
    /// Unfused forward graph.
    pub forward: OperatorGraph,
}

impl ModelInput {
    pub fn new(name: impl Into<String>, forward: OperatorGraph) -> Self {
        Self {
            name: name.into(),
            forward,
        }
    }
}

/// One pipeline stage ready for scheduling.
#[derive(Debug, Clone)]
pub struct StageContext {
    pub stage: usize,
    /// Fused stage graph; one execution processes one micro-batch.
    pub workload: Workload,
    /// Makespans the stage's local search already established.
    pub known: BTreeMap<DesignTuple, u64>,
}

impl StageContext {
    /// Makespan of the stage on `d`, or `None` if `d` lacks a core type the
    /// stage needs.
    pub fn makespan(&self, d: &DesignPoint, cfg: &SystemConfig) -> Option<u64> {
        if let Some(&m) = self.known.get(&d.tuple()) {
            return Some(m);
        }
        let tasks = annotate(&self.workload.graph, d.dims, cfg).tasks();
        let info = compute_asap_alap(&tasks);
        list_schedule(&tasks, &info, CoreCounts::new(d.num_tc, d.num_vc))
            .ok()
            .map(|s| s.makespan)
    }

    /// A lower bound on any schedule's makespan on `d`: the critical path and
    /// the per-type work spread over all cores of that type.
    pub fn makespan_lower_bound(&self, d: &DesignPoint, cfg: &SystemConfig) -> Option<u64> {
        let tasks = annotate(&self.workload.graph, d.dims, cfg).tasks();
        let need = tasks.minimum_counts();
        if (need.tensor > 0 && d.num_tc == 0) || (need.vector > 0 && d.num_vc == 0) {
            return None;
        }
        let info = compute_asap_alap(&tasks);
        let (mut wt, mut wv) = (0u64, 0u64);
        for v in 0..tasks.len() {
            let a = tasks.affinity(v);
            if a.uses_tensor() {
                wt += tasks.latency(v);
            }
            if a.uses_vector() {
                wv += tasks.latency(v);
            }
        }
        let mut lb = info.best_latency;
        if d.num_tc > 0 {
            lb = lb.max(wt.div_ceil(u64::from(d.num_tc)));
        }
        if d.num_vc > 0 {
            lb = lb.max(wv.div_ceil(u64::from(d.num_vc)));
        }
        Some(lb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Common,
    Individual,
    Mosaic,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelinePlan {
    pub mode: Mode,
    pub model: String,
    pub designs: Vec<DesignPoint>,
    pub stage_makespan_cycles: Vec<u64>,
    pub stage_times_s: Vec<f64>,
    /// Transfer time from stage `i` to `i + 1`, both directions.
    pub comm_s: Vec<f64>,
    pub bottleneck_s: f64,
    pub iteration_time_s: f64,
    pub throughput: f64,
    pub total_tdp_w: f64,
    pub perf_per_tdp: f64,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelResult {
    pub name: String,
    pub partition: StagePartition,
    pub local: Vec<LocalResult>,
    pub mosaic: Option<PipelinePlan>,
    pub individual: Option<PipelinePlan>,
    #[serde(skip)]
    pub stages: Vec<StageContext>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolEntry {
    pub design: DesignPoint,
    /// Tree level (designs of equal area share a level).
    pub level: usize,
    /// `model/stage#rank` for every top-k list the design came from.
    pub sources: Vec<String>,
    pub evaluated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlobalStats {
    pub pool_size: usize,
    pub levels: usize,
    pub evaluated: usize,
    pub pruned: usize,
    /// Level at which the tree walk stopped, if it stopped early.
    pub stopped_at_level: Option<usize>,
    /// Designs past the stopping level evaluated because their optimistic
    /// bound could still beat the incumbent.
    pub rescued: usize,
    pub local_visited: usize,
    pub local_space: usize,
}

/// Designs chosen for the homogeneous modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub individual: Vec<Option<DesignTuple>>,
    pub common: Option<DesignTuple>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommonPlan {
    pub design: DesignPoint,
    pub metric: Option<f64>,
    pub plans: Vec<PipelinePlan>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalResult {
    pub params: PipelineParams,
    pub models: Vec<ModelResult>,
    pub common: Option<CommonPlan>,
    pub pool: Vec<PoolEntry>,
    pub selection: Selection,
    pub stats: GlobalStats,
}

/// Evaluates a pipeline with design `designs[i]` on stage `i`. Returns
/// `None` when some design cannot run its stage.
pub fn evaluate_plan(
    mode: Mode,
    model: &ModelResult,
    designs: &[DesignPoint],
    pp: &PipelineParams,
    cfg: &SystemConfig,
    metric: &MetricSpec,
) -> Result<Option<PipelinePlan>, PipelineError> {
    if designs.len() != model.stages.len() {
        return Err(PipelineError::InvalidParams(format!(
            "{} designs for {} stages",
            designs.len(),
            model.stages.len()
        )));
    }
    let mut cycles = Vec::with_capacity(designs.len());
    for (ctx, d) in model.stages.iter().zip(designs) {
        match ctx.makespan(d, cfg) {
            Some(m) => cycles.push(m),
            None => return Ok(None),
        }
    }
    Ok(Some(assemble(
        mode,
        model,
        designs.to_vec(),
        cycles,
        pp,
        cfg,
        metric,
    )))
}

fn comm_times(partition: &StagePartition, cfg: &SystemConfig) -> Vec<f64> {
    partition
        .boundary_activation_bytes
        .iter()
        .map(|&b| 2.0 * b as f64 / cfg.interconnect_bw_bytes_per_s)
        .collect()
}

fn assemble(
    mode: Mode,
    model: &ModelResult,
    designs: Vec<DesignPoint>,
    cycles: Vec<u64>,
    pp: &PipelineParams,
    cfg: &SystemConfig,
    metric: &MetricSpec,
) -> PipelinePlan {
    let times: Vec<f64> = cycles.iter().map(|&c| c as f64 / cfg.clock_hz).collect();
    let comm = comm_times(&model.partition, cfg);
    let bottleneck = bottleneck_time(&times, &comm);
    let iteration = pipeline_iteration_time(&times, &comm, pp);
    let throughput = f64::from(pp.microbatches) * pp.microbatch_size as f64 / iteration;
    let tdp = f64::from(pp.tmp_width) * designs.iter().map(|d| d.tdp_watts).sum::<f64>();
    PipelinePlan {
        mode,
        model: model.name.clone(),
        designs,
        stage_makespan_cycles: cycles,
        stage_times_s: times,
        comm_s: comm,
        bottleneck_s: bottleneck,
        iteration_time_s: iteration,
        throughput,
        total_tdp_w: tdp,
        perf_per_tdp: throughput / tdp,
        metric: metric.value(throughput, tdp),
    }
}

/// Optimistic metric of a homogeneous pipeline on `d`.
fn metric_upper_bound(
    model: &ModelResult,
    d: &DesignPoint,
    pp: &PipelineParams,
    cfg: &SystemConfig,
    metric: &MetricSpec,
) -> Option<f64> {
    let mut cycles = Vec::with_capacity(model.stages.len());
    for ctx in &model.stages {
        cycles.push(ctx.makespan_lower_bound(d, cfg)?);
    }
    let designs = vec![*d; model.stages.len()];
    assemble(Mode::Individual, model, designs, cycles, pp, cfg, metric).metric
}

/// Homogeneous plans of one design, one per model.
type Row = Vec<Option<PipelinePlan>>;

fn row_metrics(row: &Row) -> Vec<Option<f64>> {
    row.iter()
        .map(|p| p.as_ref().and_then(|p| p.metric))
        .collect()
}

fn weighted(metric: &MetricSpec, names: &[String], values: &[Option<f64>]) -> Option<f64> {
    let mut total = 0.0;
    for (name, v) in names.iter().zip(values) {
        total += metric.weight(name, names.len()) * (*v)?;
    }
    Some(total)
}

fn rank(a: (Option<f64>, &DesignPoint), b: (Option<f64>, &DesignPoint)) -> std::cmp::Ordering {
    cmp_metric(b.0, a.0)
        .then_with(|| a.1.area_mm2.total_cmp(&b.1.area_mm2))
        .then_with(|| a.1.tuple().cmp(&b.1.tuple()))
}

/// Picks the best design per model and the best weighted average across
/// models. Designs whose metric is `None` are never selected.
pub fn select_plans(
    candidates: &[(DesignPoint, Vec<Option<f64>>)],
    names: &[String],
    metric: &MetricSpec,
) -> Selection {
    let individual = (0..names.len())
        .map(|m| {
            candidates
                .iter()
                .filter(|(_, v)| v[m].is_some())
                .min_by(|a, b| rank((a.1[m], &a.0), (b.1[m], &b.0)))
                .map(|(d, _)| d.tuple())
        })
        .collect();
    let common = candidates
        .iter()
        .filter_map(|(d, v)| weighted(metric, names, v).map(|w| (d, w)))
        .min_by(|a, b| rank((Some(a.1), a.0), (Some(b.1), b.0)))
        .map(|(d, _)| d.tuple());
    Selection { individual, common }
}

/// Selection over every design in the pool, without pruning.
pub fn exhaustive_selection(
    result: &GlobalResult,
    cfg: &SystemConfig,
    metric: &MetricSpec,
    exec: ExecMode,
) -> Result<Selection, PipelineError> {
    let rows = evaluate_rows(
        &result.models,
        &result.pool,
        &(0..result.pool.len()).collect::<Vec<_>>(),
        &result.params,
        cfg,
        metric,
        exec,
    )?;
    let names: Vec<String> = result.models.iter().map(|m| m.name.clone()).collect();
    let cands: Vec<(DesignPoint, Vec<Option<f64>>)> = result
        .pool
        .iter()
        .zip(&rows)
        .map(|(e, r)| (e.design, row_metrics(r)))
        .collect();
    Ok(select_plans(&cands, &names, metric))
}

fn evaluate_rows(
    models: &[ModelResult],
    pool: &[PoolEntry],
    idx: &[usize],
    pp: &PipelineParams,
    cfg: &SystemConfig,
    metric: &MetricSpec,
    exec: ExecMode,
) -> Result<Vec<Row>, PipelineError> {
    par::map(exec, idx, |&i| {
        models
            .iter()
            .map(|m| {
                evaluate_plan(
                    Mode::Individual,
                    m,
                    &vec![pool[i].design; m.stages.len()],
                    pp,
                    cfg,
                    metric,
                )
            })
            .collect::<Result<Row, _>>()
    })
    .into_iter()
    .collect()
}

fn area_key(d: &DesignPoint) -> i64 {
    (d.area_mm2 * 1e6).round() as i64
}

/// Per-stage floor: a pipeline can only reach `min_throughput` if every
/// stage alone processes micro-batches at `(m + s - 1) / m` times that rate.
fn stage_metric(metric: &MetricSpec, pp: &PipelineParams) -> MetricSpec {
    let m = f64::from(pp.microbatches);
    let s = f64::from(pp.depth);
    MetricSpec {
        min_throughput: metric.min_throughput.map(|f| f * (m + s - 1.0) / m),
        weights: BTreeMap::new(),
        ..metric.clone()
    }
}

fn prepare_model(
    model: &ModelInput,
    pp: &PipelineParams,
    cfg: &SystemConfig,
) -> Result<(StagePartition, Vec<StageContext>), PipelineError> {
    let topts = TrainingOptions {
        batch_size: pp.microbatch_size,
        element_bytes: cfg.element_bytes,
    };
    let mut fwd = model.forward.clone();
    fwd.rename(model.name.clone());
    let tg = build_training_graph(&fwd, &topts)?;
    let tg = apply_tmp(&tg, pp.tmp_width, &topts)?;
    let partition = partition_model(&tg, pp, cfg)?;
    let stages = partition
        .stage_graphs
        .iter()
        .enumerate()
        .map(|(i, g)| StageContext {
            stage: i,
            workload: Workload::new(
                format!("{}/s{i}", model.name),
                apply_fusion(g),
                pp.microbatch_size,
            ),
            known: BTreeMap::new(),
        })
        .collect();
    Ok((partition, stages))
}

/// Runs local search on every stage of every model, then composes the
/// pipeline-wide designs.
///
/// The candidate pool is the union of the per-stage top-k lists. It is walked
/// as a tree from the smallest area upward, one level per distinct area.
/// A level's designs stay active if, for some active design of the previous
/// level, they are not worse on every model. When a level has no active
/// designs, the next `hysteresis_levels` levels are still evaluated; if
/// none of them revives the walk, it stops. Designs past the stop are only
/// evaluated when an optimistic bound says they could still be selected.
pub fn global_search(
    models: &[ModelInput],
    pp: &PipelineParams,
    cfg: &SystemConfig,
    metric: &MetricSpec,
    k: usize,
    opts: &SearchOptions,
) -> Result<GlobalResult, PipelineError> {
    pp.validate()?;
    if models.is_empty() {
        return Err(SearchError::NoWorkloads.into());
    }
    let names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(PipelineError::InvalidParams(
            "model names must be unique".into(),
        ));
    }
    metric.validate().map_err(SearchError::InvalidOptions)?;

    let prepared = models
        .iter()
        .map(|m| prepare_model(m, pp, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(m, (_, st))| (0..st.len()).map(move |s| (m, s)))
        .collect();
    let smetric = stage_metric(metric, pp);
    let locals = par::map(opts.exec, &jobs, |&(m, s)| {
        local_search(
            std::slice::from_ref(&prepared[m].1[s].workload),
            cfg,
            &smetric,
            k,
            opts,
        )
    });

    let mut results: Vec<ModelResult> = Vec::with_capacity(models.len());
    let mut by_model: Vec<Vec<LocalResult>> = vec![Vec::new(); models.len()];
    for (&(m, _), r) in jobs.iter().zip(locals) {
        by_model[m].push(r?);
    }
    for ((model, (partition, mut stages)), local) in models.iter().zip(prepared).zip(by_model) {
        for (ctx, lr) in stages.iter_mut().zip(&local) {
            for e in &lr.topk.entries {
                ctx.known
                    .insert(e.design.tuple(), e.workloads[0].makespan_cycles);
            }
        }
        results.push(ModelResult {
            name: model.name.clone(),
            partition,
            local,
            mosaic: None,
            individual: None,
            stages,
        });
    }

    for r in &mut results {
        let tops: Option<Vec<DesignPoint>> = r
            .local
            .iter()
            .map(|l| l.topk.best().map(|b| b.design))
            .collect();
        if let Some(designs) = tops {
            r.mosaic = evaluate_plan(Mode::Mosaic, r, &designs, pp, cfg, metric)?;
        }
    }

    // candidate pool, smallest area first
    let mut sources: BTreeMap<DesignTuple, (DesignPoint, Vec<String>)> = BTreeMap::new();
    for r in &results {
        for (s, l) in r.local.iter().enumerate() {
            for (rank, e) in l.topk.entries.iter().enumerate() {
                sources
                    .entry(e.design.tuple())
                    .or_insert_with(|| (e.design, Vec::new()))
                    .1
                    .push(format!("{}/s{s}#{}", r.name, rank + 1));
            }
        }
    }
    let mut pool_designs: Vec<(DesignPoint, Vec<String>)> = sources.into_values().collect();
    pool_designs.sort_by(|a, b| {
        area_key(&a.0)
            .cmp(&area_key(&b.0))
            .then_with(|| a.0.tuple().cmp(&b.0.tuple()))
    });
    let mut pool: Vec<PoolEntry> = Vec::with_capacity(pool_designs.len());
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for (i, (design, src)) in pool_designs.into_iter().enumerate() {
        if i == 0 || area_key(&design) != area_key(&pool[i - 1].design) {
            levels.push(Vec::new());
        }
        levels.last_mut().expect("pushed above").push(i);
        pool.push(PoolEntry {
            design,
            level: levels.len() - 1,
            sources: src,
            evaluated: false,
        });
    }

    let mut rows: BTreeMap<usize, Row> = BTreeMap::new();
    let eval = |idx: &[usize], rows: &mut BTreeMap<usize, Row>| -> Result<(), PipelineError> {
        let out = evaluate_rows(&results, &pool, idx, pp, cfg, metric, opts.exec)?;
        rows.extend(idx.iter().copied().zip(out));
        Ok(())
    };
    let not_worse =
        |c: &[Option<f64>], p: &[Option<f64>]| c.iter().zip(p).any(|(a, b)| better(*a, *b));

    let mut stopped_at = None;
    if !levels.is_empty() {
        eval(&levels[0], &mut rows)?;
        let mut active: Vec<usize> = levels[0].clone();
        let mut j = 1;
        while j < levels.len() {
            let mut revived = None;
            for h in 0..=opts.hysteresis_levels as usize {
                let lv = j + h;
                if lv >= levels.len() {
                    break;
                }
                eval(&levels[lv], &mut rows)?;
                let kept: Vec<usize> = levels[lv]
                    .iter()
                    .copied()
                    .filter(|c| {
                        let cm = row_metrics(&rows[c]);
                        active
                            .iter()
                            .any(|p| not_worse(&cm, &row_metrics(&rows[p])))
                    })
                    .collect();
                if !kept.is_empty() {
                    revived = Some((lv, kept));
                    break;
                }
            }
            match revived {
                Some((lv, kept)) => {
                    active = kept;
                    j = lv + 1;
                }
                None => {
                    let next = j + opts.hysteresis_levels as usize + 1;
                    if next < levels.len() {
                        stopped_at = Some(next);
                    }
                    break;
                }
            }
        }
    }

    let mut rescued = 0;
    if let Some(stop) = stopped_at {
        let current: Vec<(DesignPoint, Vec<Option<f64>>)> = rows
            .iter()
            .map(|(&i, r)| (pool[i].design, row_metrics(r)))
            .collect();
        let sel = select_plans(&current, &names, metric);
        let incumbent = |t: Option<DesignTuple>, m: Option<usize>| -> Option<f64> {
            let t = t?;
            let (_, v) = current.iter().find(|(d, _)| d.tuple() == t)?;
            match m {
                Some(m) => v[m],
                None => weighted(metric, &names, v),
            }
        };
        let inc_ind: Vec<Option<f64>> = sel
            .individual
            .iter()
            .enumerate()
            .map(|(m, t)| incumbent(*t, Some(m)))
            .collect();
        let inc_common = incumbent(sel.common, None);
        let can_win = |ub: Option<f64>, inc: Option<f64>| match (ub, inc) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(u), Some(i)) => u >= i,
        };
        let remaining: Vec<usize> = levels[stop..].iter().flatten().copied().collect();
        let bounds: Vec<Vec<Option<f64>>> = par::map(opts.exec, &remaining, |&i| {
            results
                .iter()
                .map(|r| metric_upper_bound(r, &pool[i].design, pp, cfg, metric))
                .collect()
        });
        let keep: Vec<usize> = remaining
            .iter()
            .zip(&bounds)
            .filter(|(_, ub)| {
                ub.iter().zip(&inc_ind).any(|(u, i)| can_win(*u, *i))
                    || can_win(weighted(metric, &names, ub), inc_common)
            })
            .map(|(&i, _)| i)
            .collect();
        rescued = keep.len();
        eval(&keep, &mut rows)?;
    }

    let candidates: Vec<(DesignPoint, Vec<Option<f64>>)> = rows
        .iter()
        .map(|(&i, r)| (pool[i].design, row_metrics(r)))
        .collect();
    let selection = select_plans(&candidates, &names, metric);
    let find = |t: DesignTuple| {
        rows.iter()
            .find(|(&i, _)| pool[i].design.tuple() == t)
            .map(|(_, r)| r)
    };
    for (m, r) in results.iter_mut().enumerate() {
        if let Some(t) = selection.individual[m] {
            r.individual = find(t).and_then(|row| row[m].clone());
        }
    }
    let common = selection.common.and_then(|t| {
        let row = find(t)?;
        let plans: Option<Vec<PipelinePlan>> = row
            .iter()
            .map(|p| {
                p.clone().map(|p| PipelinePlan {
                    mode: Mode::Common,
                    ..p
                })
            })
            .collect();
        let plans = plans?;
        let design = plans.first()?.designs[0];
        Some(CommonPlan {
            design,
            metric: weighted(metric, &names, &row_metrics(row)),
            plans,
        })
    });
    for r in &mut results {
        if let Some(p) = r.individual.as_mut() {
            p.mode = Mode::Individual;
        }
    }
    for &i in rows.keys() {
        pool[i].evaluated = true;
    }

    let stats = GlobalStats {
        pool_size: pool.len(),
        levels: levels.len(),
        evaluated: rows.len(),
        pruned: pool.len() - rows.len(),
        stopped_at_level: stopped_at,
        rescued,
        local_visited: results
            .iter()
            .flat_map(|r| &r.local)
            .map(|l| l.visited)
            .sum(),
        local_space: results.iter().flat_map(|r| &r.local).map(|l| l.space).sum(),
    };
    Ok(GlobalResult {
        params: *pp,
        models: results,
        common,
        pool,
        selection,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Operator;

    fn chain(name: &str, layers: usize, n: u64) -> ModelInput {
        let ops: Vec<Operator> = (0..layers)
            .flat_map(|i| {
                [
                    Operator::gemm(format!("fc{i}"), 64, n, n)
                        .with_params(n * n * 2)
                        .with_activation(64 * n * 2),
                    Operator::vector(format!("act{i}"), 64 * n).with_activation(64 * n * 2),
                ]
            })
            .collect();
        let mut edges = Vec::new();
        for i in 0..layers {
            edges.push((format!("fc{i}"), format!("act{i}")));
            if i + 1 < layers {
                edges.push((format!("act{i}"), format!("fc{}", i + 1)));
            }
        }
        ModelInput::new(name, OperatorGraph::new(name, ops, &edges).unwrap())
    }

    fn small_opts() -> SearchOptions {
        SearchOptions {
            root: crate::arch::CoreDims::new(64, 64, 64),
            ..SearchOptions::default()
        }
    }

    fn pp(depth: u32) -> PipelineParams {
        PipelineParams {
            depth,
            microbatches: 4,
            microbatch_size: 4,
            ..PipelineParams::default()
        }
    }

    #[test]
    fn single_stage_modes_coincide_with_local_top1() {
        let models = [chain("a", 2, 64)];
        let cfg = SystemConfig::default();
        let r = global_search(
            &models,
            &pp(1),
            &cfg,
            &MetricSpec::throughput(),
            1,
            &small_opts(),
        )
        .unwrap();
        let top = r.models[0].local[0].topk.best().unwrap().design.tuple();
        assert_eq!(r.models[0].mosaic.as_ref().unwrap().designs[0].tuple(), top);
        assert_eq!(
            r.models[0].individual.as_ref().unwrap().designs[0].tuple(),
            top
        );
        assert_eq!(r.common.as_ref().unwrap().design.tuple(), top);
    }

    #[test]
    fn plan_invariants_hold() {
        let models = [chain("a", 4, 64), chain("b", 3, 128)];
        let cfg = SystemConfig::default();
        let p = pp(2);
        let r = global_search(
            &models,
            &p,
            &cfg,
            &MetricSpec::throughput(),
            2,
            &small_opts(),
        )
        .unwrap();
        let plans = r
            .models
            .iter()
            .flat_map(|m| [m.mosaic.as_ref(), m.individual.as_ref()])
            .flatten()
            .chain(r.common.iter().flat_map(|c| &c.plans));
        for plan in plans {
            let expect =
                f64::from(p.microbatches) * p.microbatch_size as f64 / plan.iteration_time_s;
            assert!((plan.throughput - expect).abs() <= 1e-9 * expect);
            assert!(
                (plan.perf_per_tdp - plan.throughput / plan.total_tdp_w).abs()
                    <= 1e-12 * plan.perf_per_tdp
            );
            if plan.mode != Mode::Mosaic {
                assert!(plan
                    .designs
                    .iter()
                    .all(|d| d.tuple() == plan.designs[0].tuple()));
            }
        }
        assert_eq!(r.common.as_ref().unwrap().plans.len(), 2);
        assert_eq!(r.stats.evaluated + r.stats.pruned, r.stats.pool_size);
    }

    #[test]
    fn pruned_selection_matches_exhaustive() {
        let models = [chain("a", 4, 64), chain("b", 3, 128)];
        let cfg = SystemConfig::default();
        for metric in [MetricSpec::throughput(), MetricSpec::perf_per_tdp(1.0)] {
            let r = global_search(&models, &pp(2), &cfg, &metric, 3, &small_opts()).unwrap();
            let reference = exhaustive_selection(&r, &cfg, &metric, ExecMode::Sequential).unwrap();
            assert_eq!(r.selection, reference);
        }
    }

    #[test]
    fn mosaic_beats_homogeneous_top1_plans() {
        let models = [chain("a", 4, 64)];
        let cfg = SystemConfig::default();
        let p = pp(2);
        let r = global_search(
            &models,
            &p,
            &cfg,
            &MetricSpec::throughput(),
            2,
            &small_opts(),
        )
        .unwrap();
        let m = &r.models[0];
        let mosaic = m.mosaic.as_ref().unwrap();
        for l in &m.local {
            let d = l.topk.best().unwrap().design;
            if let Some(h) = evaluate_plan(
                Mode::Individual,
                m,
                &[d, d],
                &p,
                &cfg,
                &MetricSpec::throughput(),
            )
            .unwrap()
            {
                assert!(mosaic.throughput >= h.throughput);
            }
        }
    }
}
