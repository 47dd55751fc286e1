use std::path::PathBuf;

use dse_core::arch::SystemConfig;
use dse_core::graph::{apply_fusion, build_training_graph, load_forward_graph, TrainingOptions};
use dse_core::metric::MetricSpec;
use dse_core::sched::validate_schedule;
use dse_core::search::{exhaustive_sweep, local_search, SearchOptions, Workload};

fn workload(name: &str) -> Workload {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../workloads")
        .join(format!("{name}.json"));
    let src = std::fs::read_to_string(&path).unwrap();
    let fwd = load_forward_graph(&src).unwrap();
    let opts = TrainingOptions::default();
    let tg = apply_fusion(&build_training_graph(&fwd, &opts).unwrap());
    Workload::new(name, tg, opts.batch_size)
}

const NAMES: [&str; 4] = ["chain", "diamond", "transformer4", "cnn8"];

#[test]
fn pruned_matches_exhaustive_on_bundled_workloads() {
    let cfg = SystemConfig::default();
    let opts = SearchOptions::default();
    for name in NAMES {
        let w = [workload(name)];
        let thr = MetricSpec::throughput();
        let full = exhaustive_sweep(&w, &cfg, &thr, 1, &opts).unwrap();
        let floor = 0.5 * full.topk.best().unwrap().workloads[0].throughput;
        for metric in [thr.clone(), MetricSpec::perf_per_tdp(floor)] {
            let full = exhaustive_sweep(&w, &cfg, &metric, 3, &opts).unwrap();
            let pruned = local_search(&w, &cfg, &metric, 3, &opts).unwrap();
            let (a, b) = (pruned.topk.best().unwrap(), full.topk.best().unwrap());
            println!(
                "{name} {:?}: pruned {} ({} visited) vs full {} ({} visited)",
                metric.objective,
                a.design.tuple(),
                pruned.visited,
                b.design.tuple(),
                full.visited
            );
            assert_eq!(a.design.tuple(), b.design.tuple(), "{name}");
            assert!(
                pruned.visited * 2 <= full.visited,
                "{name}: {} visited",
                pruned.visited
            );
            for e in &pruned.topk.entries {
                assert!(dse_core::arch::within_budget(&e.design, &cfg));
                let tasks = dse_core::cost::annotate(&w[0].graph, e.design.dims, &cfg).tasks();
                assert!(validate_schedule(&e.workloads[0].schedule, tasks.edges()).is_empty());
            }
        }
    }
}
