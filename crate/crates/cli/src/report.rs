//! JSON, JSONL and CSV report writers. Output depends only on the inputs:
//! maps are ordered and no timestamps are recorded.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use dse_core::arch::{CoreDims, DesignPoint, SystemConfig};
use dse_core::cost::AnnotatedGraph;
use dse_core::graph::{Affinity, Pass};
use dse_core::ilp::SolveStatus;
use dse_core::pipeline::{GlobalResult, Mode, PipelinePlan};
use dse_core::sched::compute_asap_alap;
use dse_core::search::LocalResult;

use crate::manifest::{GraphInput, RunManifest, TOOL, VERSION};

#[derive(Serialize)]
struct Header<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    manifest: &'a RunManifest,
}

fn header(m: &RunManifest) -> Header<'_> {
    Header {
        tool: TOOL,
        version: VERSION,
        config_hash: m.config_hash(),
        manifest: m,
    }
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn fmt_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct Fallback {
    dims: CoreDims,
    workload: String,
    status: Option<SolveStatus>,
}

#[derive(Serialize)]
struct LocalReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    result: &'a LocalResult,
    ilp_fallbacks: Vec<Fallback>,
}

#[derive(Serialize)]
struct LocalRow {
    rank: usize,
    design: String,
    num_tc: u32,
    tc_rows: u32,
    tc_cols: u32,
    num_vc: u32,
    vc_width: u32,
    area_mm2: f64,
    tdp_w: f64,
    metric: Option<f64>,
    workload: String,
    makespan_cycles: u64,
    throughput: f64,
}

fn fallbacks(r: &LocalResult) -> Vec<Fallback> {
    r.fallbacks()
        .into_iter()
        .map(|(dims, n)| Fallback {
            dims,
            workload: n.workload,
            status: n.ilp_status,
        })
        .collect()
}

/// `topk.json`, `trace.jsonl` and `summary.csv`.
pub fn write_local(out: &Path, m: &RunManifest, r: &LocalResult) -> Result<()> {
    let report = LocalReport {
        header: header(m),
        result: r,
        ilp_fallbacks: fallbacks(r),
    };
    write_file(&out.join("topk.json"), &to_json(&report)?)?;

    let mut trace = Vec::new();
    for rec in &r.trace {
        serde_json::to_writer(&mut trace, rec)?;
        trace.push(b'\n');
    }
    std::fs::write(out.join("trace.jsonl"), trace).context("cannot write trace.jsonl")?;

    let mut csv =
        csv::Writer::from_path(out.join("summary.csv")).context("cannot write summary.csv")?;
    for (i, s) in r.topk.entries.iter().enumerate() {
        let d = &s.design;
        for w in &s.workloads {
            csv.serialize(LocalRow {
                rank: i + 1,
                design: d.tuple().to_string(),
                num_tc: d.num_tc,
                tc_rows: d.dims.tc_rows,
                tc_cols: d.dims.tc_cols,
                num_vc: d.num_vc,
                vc_width: d.dims.vc_width,
                area_mm2: d.area_mm2,
                tdp_w: d.tdp_watts,
                metric: s.metric,
                workload: w.workload.clone(),
                makespan_cycles: w.makespan_cycles,
                throughput: w.throughput,
            })?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct StageFallback {
    model: String,
    stage: usize,
    dims: CoreDims,
    status: Option<SolveStatus>,
}

#[derive(Serialize)]
struct GlobalReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    result: &'a GlobalResult,
    ilp_fallbacks: Vec<StageFallback>,
}

#[derive(Serialize)]
struct PlanRow {
    mode: Mode,
    model: String,
    designs: String,
    stages: usize,
    bottleneck_s: f64,
    iteration_time_s: f64,
    throughput: f64,
    total_tdp_w: f64,
    perf_per_tdp: f64,
    metric: Option<f64>,
    pool_size: usize,
    evaluated: usize,
    pruned: usize,
}

/// `report.json` and `summary.csv`.
pub fn write_global(out: &Path, m: &RunManifest, r: &GlobalResult) -> Result<()> {
    let ilp_fallbacks = r
        .models
        .iter()
        .flat_map(|model| {
            model.local.iter().enumerate().flat_map(move |(stage, l)| {
                l.fallbacks()
                    .into_iter()
                    .map(move |(dims, n)| StageFallback {
                        model: model.name.clone(),
                        stage,
                        dims,
                        status: n.ilp_status,
                    })
            })
        })
        .collect();
    let report = GlobalReport {
        header: header(m),
        result: r,
        ilp_fallbacks,
    };
    write_file(&out.join("report.json"), &to_json(&report)?)?;

    let mut csv =
        csv::Writer::from_path(out.join("summary.csv")).context("cannot write summary.csv")?;
    let row = |p: &PipelinePlan| PlanRow {
        mode: p.mode,
        model: p.model.clone(),
        designs: p
            .designs
            .iter()
            .map(|d| d.tuple().to_string())
            .collect::<Vec<_>>()
            .join(" | "),
        stages: p.designs.len(),
        bottleneck_s: p.bottleneck_s,
        iteration_time_s: p.iteration_time_s,
        throughput: p.throughput,
        total_tdp_w: p.total_tdp_w,
        perf_per_tdp: p.perf_per_tdp,
        metric: p.metric,
        pool_size: r.stats.pool_size,
        evaluated: r.stats.evaluated,
        pruned: r.stats.pruned,
    };
    for model in &r.models {
        for p in [&model.mosaic, &model.individual].into_iter().flatten() {
            csv.serialize(row(p))?;
        }
    }
    if let Some(c) = &r.common {
        for p in &c.plans {
            csv.serialize(row(p))?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OpEstimate<'a> {
    id: &'a str,
    pass: Pass,
    core: Affinity,
    latency_cycles: u64,
    compute_cycles: u64,
    memory_cycles: u64,
    moved_bytes: u64,
    energy_j: f64,
    critical: bool,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    graph: &'a str,
    dims: CoreDims,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<&'a DesignPoint>,
    footprint_bytes: u64,
    serial_cycles: u64,
    best_latency_cycles: u64,
    energy_j: f64,
    ops: Vec<OpEstimate<'a>>,
}

pub fn estimate_json(
    g: &GraphInput,
    cfg: &SystemConfig,
    ag: &AnnotatedGraph,
    design: Option<&DesignPoint>,
    footprint: u64,
) -> Result<String> {
    let tasks = ag.tasks();
    let info = compute_asap_alap(&tasks);
    let ops = ag
        .graph
        .graph
        .ops()
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let c = ag.cost(&op.id);
            OpEstimate {
                id: &op.id,
                pass: op.pass,
                core: c.core,
                latency_cycles: c.latency_cycles,
                compute_cycles: c.compute_cycles,
                memory_cycles: c.memory_cycles,
                moved_bytes: c.moved_bytes,
                energy_j: c.energy_j,
                critical: info.is_critical(i),
            }
        })
        .collect();
    let mut hasher_input = serde_json::to_vec(cfg)?;
    hasher_input.extend_from_slice(g.sha256.as_bytes());
    hasher_input.extend_from_slice(ag.dims.to_string().as_bytes());
    let report = EstimateReport {
        tool: TOOL,
        version: VERSION,
        config_hash: crate::manifest::sha256_hex(&hasher_input),
        graph: &g.name,
        dims: ag.dims,
        design,
        footprint_bytes: footprint,
        serial_cycles: tasks.serial_sum(),
        best_latency_cycles: info.best_latency,
        energy_j: ag.total_energy_j(),
        ops,
    };
    to_json(&report)
}
