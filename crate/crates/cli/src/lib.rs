//! Command-line front end: argument parsing, run manifests and reports.

pub mod manifest;
pub mod report;
pub mod schedule_file;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dse_core::arch::{CoreDims, DesignPoint, SystemConfig};
use dse_core::cost::{annotate, training_memory_footprint};
use dse_core::graph::{
    apply_fusion, build_training_graph, load_graph, OperatorGraph, Pass, TrainingGraph,
    TrainingOptions,
};
use dse_core::ilp::{build_instance, solve, SolveLimits, SolveStatus};
use dse_core::metric::MetricSpec;
use dse_core::par::ExecMode;
use dse_core::pipeline::{global_search, ModelInput, PipelineError, PipelineParams, Scheme};
use dse_core::sched::{
    compute_asap_alap, heuristic_core_search, list_schedule, validate_against_graph, CoreCounts,
    ScheduleError,
};
use dse_core::search::{local_search, Engine, SearchError, SearchOptions, Workload};

use manifest::{load_graphs, load_system, RunManifest};
use schedule_file::ScheduleFile;

#[derive(Debug, Parser)]
#[command(
    name = "dse",
    version,
    about = "Design-space exploration for DNN training accelerators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search core counts and dimensions for one accelerator.
    LocalSearch(LocalArgs),
    /// Partition models into pipeline stages and pick designs for them.
    GlobalSearch(GlobalArgs),
    /// Per-operator cost estimates at fixed core dimensions.
    Estimate(EstimateArgs),
    /// Schedule a graph on a design and write the schedule.
    Schedule(ScheduleArgs),
    /// Check a schedule file against a graph.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Throughput,
    PerfTdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Heuristic,
    Ilp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Gpipe,
    Pipedream,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Forward-graph JSON file; repeat for several workloads.
    #[arg(long = "graph", required = true)]
    pub graphs: Vec<PathBuf>,
    /// System configuration (TOML or JSON); defaults apply when omitted.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Samples per graph execution.
    #[arg(long, default_value_t = 8)]
    pub batch_size: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[arg(long, value_enum, default_value_t = MetricArg::Throughput)]
    pub metric: MetricArg,
    /// Samples/s floor, required with `--metric perf-tdp`.
    #[arg(long)]
    pub min_throughput: Option<f64>,
    #[arg(long, value_enum, default_value_t = EngineArg::Heuristic)]
    pub engine: EngineArg,
    /// Designs kept per search.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Largest core dimensions, `RxC/W`.
    #[arg(long, default_value = "256x256/256")]
    pub root: CoreDims,
    #[arg(long, default_value_t = 8)]
    pub min_dim: u32,
    #[arg(long, default_value_t = 1)]
    pub hysteresis: u32,
    /// Exact-solver search nodes before it gives up and the heuristic is used.
    #[arg(long, default_value_t = SolveLimits::default().node_budget)]
    pub node_budget: u64,
    /// Worker threads; WHAM_THREADS overrides.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LocalArgs {
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Pipeline stages per model.
    #[arg(long, default_value_t = 32)]
    pub depth: u32,
    #[arg(long, value_enum, default_value_t = SchemeArg::Gpipe)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 8)]
    pub microbatches: u32,
    #[arg(long, default_value_t = 8)]
    pub microbatch_size: u64,
    /// Tensor-model-parallel width (power of two).
    #[arg(long, default_value_t = 1)]
    pub tmp_width: u32,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[arg(long, default_value = "128x128/128")]
    pub dims: CoreDims,
    /// Tensor cores; with `--vc`, also reports the design's area and TDP.
    #[arg(long)]
    pub tc: Option<u32>,
    #[arg(long)]
    pub vc: Option<u32>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[arg(long, default_value = "128x128/128")]
    pub dims: CoreDims,
    /// Fix the tensor-core count instead of searching it (needs `--vc`).
    #[arg(long, requires = "vc")]
    pub tc: Option<u32>,
    #[arg(long, requires = "tc")]
    pub vc: Option<u32>,
    #[arg(long, value_enum, default_value_t = EngineArg::Heuristic)]
    pub engine: EngineArg,
    #[arg(long, default_value_t = SolveLimits::default().node_budget)]
    pub node_budget: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    /// Training-graph dump, or a forward graph to synthesize it from.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub batch_size: u64,
}

/// A run that parsed fine but has no feasible answer.
#[derive(Debug)]
pub struct Infeasible(pub String);

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "infeasible: {}", self.0)
    }
}

impl std::error::Error for Infeasible {}

fn is_infeasible_search(e: &SearchError) -> bool {
    matches!(
        e,
        SearchError::InfeasibleBudget(_)
            | SearchError::Schedule(ScheduleError::InfeasibleBudget(_))
    )
}

/// 2 for infeasible problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Infeasible>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SearchError>() {
            if is_infeasible_search(e) {
                return 2;
            }
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            match e {
                PipelineError::UnpartitionableModel(_) => return 2,
                PipelineError::Search(s) if is_infeasible_search(s) => return 2,
                _ => {}
            }
        }
        if let Some(ScheduleError::InfeasibleBudget(_)) = cause.downcast_ref::<ScheduleError>() {
            return 2;
        }
    }
    1
}

/// Thread count from `WHAM_THREADS`, else the flag, else `default`.
pub fn thread_count(flag: Option<usize>, default: Option<usize>) -> Result<Option<usize>> {
    if let Ok(v) = std::env::var("WHAM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("WHAM_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("WHAM_THREADS must be at least 1");
        }
        return Ok(Some(n));
    }
    Ok(flag.or(default))
}

impl Command {
    /// Worker threads this command wants, if it has a preference.
    pub fn threads(&self) -> Result<Option<usize>> {
        match self {
            Command::LocalSearch(a) => thread_count(a.search.threads, None),
            Command::GlobalSearch(a) => {
                thread_count(a.search.threads, Some(a.depth.max(1) as usize))
            }
            _ => thread_count(None, None),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.command.threads()?;
    let exec = if threads == Some(1) {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match cli.command {
        Command::LocalSearch(a) => cmd_local(&a, exec),
        Command::GlobalSearch(a) => cmd_global(&a, exec),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Schedule(a) => cmd_schedule(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn metric_spec(a: &SearchArgs) -> Result<MetricSpec> {
    let spec = match (a.metric, a.min_throughput) {
        (MetricArg::Throughput, None) => MetricSpec::throughput(),
        (MetricArg::Throughput, Some(_)) => {
            bail!("--min-throughput only applies to --metric perf-tdp")
        }
        (MetricArg::PerfTdp, Some(f)) => MetricSpec::perf_per_tdp(f),
        (MetricArg::PerfTdp, None) => bail!("--metric perf-tdp needs --min-throughput"),
    };
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(spec)
}

fn engine(e: EngineArg) -> Engine {
    match e {
        EngineArg::Heuristic => Engine::Heuristic,
        EngineArg::Ilp => Engine::Ilp,
    }
}

fn search_manifest(
    command: &str,
    a: &SearchArgs,
    exec: ExecMode,
    pipeline: Option<PipelineParams>,
) -> Result<RunManifest> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let graphs = load_graphs(&a.input.graphs)?;
    let system = load_system(a.input.system.as_deref())?;
    let metric = metric_spec(a)?;
    let search = SearchOptions {
        root: a.root,
        min_dim: a.min_dim,
        hysteresis_levels: a.hysteresis,
        engine: engine(a.engine),
        limits: SolveLimits {
            node_budget: a.node_budget,
        },
        exec,
        ..SearchOptions::default()
    };
    search.validate()?;
    if a.input.batch_size == 0 {
        bail!("--batch-size must be at least 1");
    }
    Ok(RunManifest {
        command: command.to_string(),
        graphs,
        system_path: a.input.system.clone(),
        system,
        metric,
        engine: search.engine,
        search,
        batch_size: a.input.batch_size,
        k: a.k,
        pipeline,
    })
}

fn training_options(batch_size: u64, cfg: &SystemConfig) -> TrainingOptions {
    TrainingOptions {
        batch_size,
        element_bytes: cfg.element_bytes,
    }
}

/// Synthesizes the training graph and checks it fits one device.
fn single_device_graph(
    fwd: &OperatorGraph,
    batch_size: u64,
    cfg: &SystemConfig,
) -> Result<TrainingGraph> {
    let tg = build_training_graph(fwd, &training_options(batch_size, cfg))?;
    let need = training_memory_footprint(&tg, 1, cfg);
    if need > cfg.hbm_bytes {
        return Err(PipelineError::UnpartitionableModel(format!(
            "{} needs {need} bytes of HBM for training, more than the {} available",
            fwd.name(),
            cfg.hbm_bytes
        ))
        .into());
    }
    Ok(apply_fusion(&tg))
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
}

fn cmd_local(a: &LocalArgs, exec: ExecMode) -> Result<()> {
    let m = search_manifest("local-search", &a.search, exec, None)?;
    let workloads = m
        .graphs
        .iter()
        .map(|g| {
            Ok(Workload::new(
                g.name.clone(),
                single_device_graph(&g.graph, m.batch_size, &m.system)?,
                m.batch_size,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = local_search(&workloads, &m.system, &m.metric, m.k, &m.search)?;
    create_dir(&a.search.out)?;
    report::write_local(&a.search.out, &m, &result)?;
    if let Some(best) = result.topk.best() {
        println!(
            "best {} metric {} ({} of {} dims visited)",
            best.design.tuple(),
            report::fmt_metric(best.metric),
            result.visited,
            result.space
        );
    }
    Ok(())
}

fn cmd_global(a: &GlobalArgs, exec: ExecMode) -> Result<()> {
    let pp = PipelineParams {
        depth: a.depth,
        scheme: match a.scheme {
            SchemeArg::Gpipe => Scheme::Gpipe,
            SchemeArg::Pipedream => Scheme::Pipedream,
        },
        microbatches: a.microbatches,
        microbatch_size: a.microbatch_size,
        tmp_width: a.tmp_width,
    };
    pp.validate()?;
    let mut m = search_manifest("global-search", &a.search, exec, Some(pp))?;
    m.batch_size = pp.microbatch_size;
    let models: Vec<ModelInput> = m
        .graphs
        .iter()
        .map(|g| ModelInput::new(g.name.clone(), g.graph.clone()))
        .collect();
    let result = global_search(&models, &pp, &m.system, &m.metric, m.k, &m.search)?;
    create_dir(&a.search.out)?;
    report::write_global(&a.search.out, &m, &result)?;
    for r in &result.models {
        if let Some(p) = &r.individual {
            println!(
                "{} individual {} throughput {:.3} perf/tdp {:.6}",
                r.name,
                p.designs[0].tuple(),
                p.throughput,
                p.perf_per_tdp
            );
        }
    }
    if let Some(c) = &result.common {
        println!(
            "common {} metric {}",
            c.design.tuple(),
            report::fmt_metric(c.metric)
        );
    }
    println!(
        "pool {} evaluated {} pruned {}",
        result.stats.pool_size, result.stats.evaluated, result.stats.pruned
    );
    Ok(())
}

fn single_graph(input: &GraphArgs) -> Result<(manifest::GraphInput, SystemConfig)> {
    if input.graphs.len() != 1 {
        bail!("this command takes exactly one --graph");
    }
    let g = manifest::load_graph_input(&input.graphs[0])?;
    let cfg = load_system(input.system.as_deref())?;
    if input.batch_size == 0 {
        bail!("--batch-size must be at least 1");
    }
    Ok((g, cfg))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let (g, cfg) = single_graph(&a.input)?;
    let tg = apply_fusion(&build_training_graph(
        &g.graph,
        &training_options(a.input.batch_size, &cfg),
    )?);
    let design = match (a.tc, a.vc) {
        (Some(t), Some(v)) => Some(DesignPoint::new(t, a.dims, v, &cfg)?),
        (None, None) => None,
        _ => bail!("--tc and --vc go together"),
    };
    let ag = annotate(&tg, a.dims, &cfg);
    let text = report::estimate_json(
        &g,
        &cfg,
        &ag,
        design.as_ref(),
        training_memory_footprint(&tg, 1, &cfg),
    )?;
    write_or_print(a.out.as_deref(), &text)
}

fn cmd_schedule(a: &ScheduleArgs) -> Result<()> {
    let (g, cfg) = single_graph(&a.input)?;
    let tg = apply_fusion(&build_training_graph(
        &g.graph,
        &training_options(a.input.batch_size, &cfg),
    )?);
    let tasks = annotate(&tg, a.dims, &cfg).tasks();
    if tasks.is_empty() {
        let empty = ScheduleFile {
            graph: g.name.clone(),
            tensor_cores: 0,
            vector_cores: 0,
            makespan: 0,
            ops: Vec::new(),
        };
        return write_or_print(a.out.as_deref(), &report::to_json(&empty)?);
    }
    let info = compute_asap_alap(&tasks);
    let schedule = match (a.tc, a.vc, a.engine) {
        (Some(t), Some(v), _) => {
            let d = DesignPoint::new(t, a.dims, v, &cfg)?;
            if !dse_core::arch::within_budget(&d, &cfg) {
                return Err(
                    Infeasible(format!("{} exceeds the area or power budget", d.tuple())).into(),
                );
            }
            list_schedule(&tasks, &info, CoreCounts::new(t, v))?
        }
        (_, _, EngineArg::Ilp) => {
            let inst = build_instance(&tasks, a.dims, &cfg, None)?;
            let sol = solve(
                &inst,
                SolveLimits {
                    node_budget: a.node_budget,
                },
            );
            match sol.status {
                SolveStatus::Optimal => sol
                    .to_schedule(&inst)
                    .context("solver returned no schedule")?,
                SolveStatus::Infeasible => {
                    return Err(Infeasible("no core counts fit the budget".into()).into())
                }
                SolveStatus::Timeout => {
                    eprintln!("exact solver hit its node budget; using the heuristic");
                    heuristic(&tasks, a, &cfg)?
                }
            }
        }
        _ => heuristic(&tasks, a, &cfg)?,
    };
    let file = ScheduleFile::from_schedule(&g.name, &schedule);
    write_or_print(a.out.as_deref(), &report::to_json(&file)?)
}

fn heuristic(
    tasks: &dse_core::sched::TaskGraph,
    a: &ScheduleArgs,
    cfg: &SystemConfig,
) -> Result<dse_core::sched::Schedule> {
    let out = heuristic_core_search(
        tasks,
        a.dims,
        cfg,
        &MetricSpec::throughput(),
        a.input.batch_size,
    )?;
    Ok(out.best().schedule.clone())
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let src = std::fs::read_to_string(&a.schedule)
        .with_context(|| format!("cannot read schedule file {}", a.schedule.display()))?;
    let file: ScheduleFile = serde_json::from_str(&src)
        .with_context(|| format!("invalid schedule file {}", a.schedule.display()))?;
    let gsrc = std::fs::read_to_string(&a.graph)
        .with_context(|| format!("cannot read graph file {}", a.graph.display()))?;
    let g =
        load_graph(&gsrc).with_context(|| format!("invalid graph file {}", a.graph.display()))?;
    let graph = if g.ops().iter().all(|op| op.pass == Pass::Forward) && !g.is_empty() {
        let cfg = load_system(a.system.as_deref())?;
        apply_fusion(&build_training_graph(
            &g,
            &training_options(a.batch_size, &cfg),
        )?)
        .graph
    } else {
        g
    };
    let violations = validate_against_graph(&file.to_schedule(), &graph);
    if violations.is_empty() {
        println!("valid: {} ops, makespan {}", file.ops.len(), file.makespan);
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(Infeasible(format!("{} violation(s)", violations.len())).into())
}
