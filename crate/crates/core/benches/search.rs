use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dse_core::arch::{CoreDims, SystemConfig};
use dse_core::graph::{apply_fusion, build_training_graph, load_forward_graph, TrainingOptions};
use dse_core::metric::MetricSpec;
use dse_core::par::ExecMode;
use dse_core::search::{exhaustive_sweep, local_search, SearchOptions, Workload};

fn workload(name: &str) -> Workload {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../workloads/{name}.json"));
    let fwd = load_forward_graph(&std::fs::read_to_string(path).unwrap()).unwrap();
    let opts = TrainingOptions::default();
    Workload::new(
        name,
        apply_fusion(&build_training_graph(&fwd, &opts).unwrap()),
        opts.batch_size,
    )
}

fn modes(c: &mut Criterion) {
    let cfg = SystemConfig::default();
    let metric = MetricSpec::throughput();
    let w = [workload("transformer4")];
    let mut group = c.benchmark_group("transformer4");
    group.sample_size(10);
    for exec in [ExecMode::Sequential, ExecMode::Parallel] {
        let opts = SearchOptions {
            exec,
            root: CoreDims::new(256, 256, 256),
            ..SearchOptions::default()
        };
        group.bench_with_input(
            BenchmarkId::new("exhaustive", format!("{exec:?}")),
            &opts,
            |b, o| b.iter(|| exhaustive_sweep(&w, &cfg, &metric, 3, o).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("pruned", format!("{exec:?}")),
            &opts,
            |b, o| b.iter(|| local_search(&w, &cfg, &metric, 3, o).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, modes);
criterion_main!(benches);
