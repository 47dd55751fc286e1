use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dse"));
    c.env_remove("WHAM_THREADS");
    c
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn workload(name: &str) -> String {
    root()
        .join("workloads")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn system() -> String {
    root().join("configs/system.toml").display().to_string()
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn local_search_writes_reports() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "local");
    let o = run(bin().args([
        "local-search",
        "--graph",
        &workload("diamond"),
        "--system",
        &system(),
        "--k",
        "3",
        "--out",
        &out,
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let topk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("local/topk.json")).unwrap())
            .unwrap();
    assert_eq!(topk["tool"], "dse");
    assert_eq!(topk["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(topk["config_hash"].as_str().unwrap().len(), 64);
    let trace = std::fs::read_to_string(dir.path().join("local/trace.jsonl")).unwrap();
    assert!(trace
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    let csv = std::fs::read_to_string(dir.path().join("local/summary.csv")).unwrap();
    assert!(csv.starts_with("rank,design,"));
    assert!(csv.lines().count() >= 2);
}

#[test]
fn perf_tdp_needs_a_floor() {
    let dir = TempDir::new().unwrap();
    let o = run(bin().args([
        "local-search",
        "--graph",
        &workload("chain"),
        "--metric",
        "perf-tdp",
        "--out",
        &path(dir.path(), "x"),
    ]));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--min-throughput"));
}

#[test]
fn missing_graph_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = run(bin().args([
        "local-search",
        "--graph",
        &path(dir.path(), "nope.json"),
        "--out",
        &path(dir.path(), "x"),
    ]));
    assert_eq!(code(&o), 1);
}

#[test]
fn tiny_budget_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let sys = dir.path().join("tiny.toml");
    std::fs::write(&sys, "area_budget_mm2 = 1.0\n").unwrap();
    let o = run(bin().args([
        "local-search",
        "--graph",
        &workload("chain"),
        "--system",
        sys.to_str().unwrap(),
        "--out",
        &path(dir.path(), "x"),
    ]));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oversized_model_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let sys = dir.path().join("small_hbm.toml");
    std::fs::write(&sys, "hbm_bytes = 1024\n").unwrap();
    let o = run(bin().args([
        "global-search",
        "--graph",
        &workload("chain"),
        "--system",
        sys.to_str().unwrap(),
        "--depth",
        "2",
        "--out",
        &path(dir.path(), "x"),
    ]));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

fn global(out: &str, threads: Option<&str>, env_threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args([
        "global-search",
        "--graph",
        &workload("transformer4"),
        "--graph",
        &workload("cnn8"),
        "--system",
        &system(),
        "--depth",
        "3",
        "--k",
        "2",
        "--scheme",
        "pipedream",
        "--microbatches",
        "4",
        "--out",
        out,
    ]);
    if let Some(t) = threads {
        c.args(["--threads", t]);
    }
    if let Some(t) = env_threads {
        c.env("WHAM_THREADS", t);
    }
    run(&mut c)
}

#[test]
fn global_search_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(dir.path(), "a"), path(dir.path(), "b"));
    let oa = global(&a, Some("1"), None);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = global(&b, None, Some("3"));
    assert_eq!(code(&ob), 0, "{}", String::from_utf8_lossy(&ob.stderr));
    for f in ["report.json", "summary.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["manifest"]["pipeline"]["scheme"], "pipedream");
    assert_eq!(report["result"]["models"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_thread_env_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = global(&path(dir.path(), "x"), None, Some("zero"));
    assert_eq!(code(&o), 1);
}

#[test]
fn ilp_timeout_falls_back_and_is_reported() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "g");
    let o = run(bin().args([
        "global-search",
        "--graph",
        &workload("diamond"),
        "--depth",
        "2",
        "--k",
        "1",
        "--engine",
        "ilp",
        "--node-budget",
        "1",
        "--root",
        "32x32/32",
        "--out",
        &out,
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("g/report.json")).unwrap()).unwrap();
    let fallbacks = report["ilp_fallbacks"].as_array().unwrap();
    assert!(!fallbacks.is_empty());
    assert!(fallbacks.iter().all(|f| f["status"] == "TIMEOUT"));
}

#[test]
fn schedule_then_validate() {
    let dir = TempDir::new().unwrap();
    let sched = dir.path().join("s.json");
    for engine in ["heuristic", "ilp"] {
        let o = run(bin().args([
            "schedule",
            "--graph",
            &workload("chain"),
            "--engine",
            engine,
            "--out",
            sched.to_str().unwrap(),
        ]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = run(bin().args([
            "validate",
            "--schedule",
            sched.to_str().unwrap(),
            "--graph",
            &workload("chain"),
        ]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }

    // Move every op to time zero: precedence breaks.
    let mut file: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&sched).unwrap()).unwrap();
    for op in file["ops"].as_array_mut().unwrap() {
        op["start"] = 0.into();
    }
    std::fs::write(&sched, serde_json::to_vec(&file).unwrap()).unwrap();
    let o = run(bin().args([
        "validate",
        "--schedule",
        sched.to_str().unwrap(),
        "--graph",
        &workload("chain"),
    ]));
    assert_eq!(code(&o), 2);
    assert!(!o.stdout.is_empty());
}

#[test]
fn fixed_counts_over_budget_are_infeasible() {
    let o = run(bin().args([
        "schedule",
        "--graph",
        &workload("chain"),
        "--dims",
        "256x256/256",
        "--tc",
        "64",
        "--vc",
        "1",
    ]));
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_graph_gives_an_empty_valid_schedule() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("empty.json");
    std::fs::write(&graph, r#"{"name": "empty", "ops": [], "edges": []}"#).unwrap();
    let sched = dir.path().join("s.json");
    let o = run(bin().args([
        "schedule",
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        sched.to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(bin().args([
        "validate",
        "--schedule",
        sched.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn estimate_reports_every_op() {
    let o = run(bin().args([
        "estimate",
        "--graph",
        &workload("diamond"),
        "--tc",
        "2",
        "--vc",
        "1",
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["design"]["area_mm2"].as_f64().unwrap() > 0.0);
    let ops = v["ops"].as_array().unwrap();
    assert!(!ops.is_empty());
    assert!(ops
        .iter()
        .all(|op| op["latency_cycles"].as_u64().unwrap() >= 1));
}
