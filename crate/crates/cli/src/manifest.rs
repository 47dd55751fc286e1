//! Everything a run depends on, resolved from the command line and hashed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use dse_core::arch::SystemConfig;
use dse_core::graph::{load_forward_graph, OperatorGraph};
use dse_core::metric::MetricSpec;
use dse_core::pipeline::PipelineParams;
use dse_core::search::{Engine, SearchOptions};

pub const TOOL: &str = "dse";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct GraphInput {
    pub path: PathBuf,
    pub name: String,
    /// SHA-256 of the file contents.
    pub sha256: String,
    #[serde(skip)]
    pub graph: OperatorGraph,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub graphs: Vec<GraphInput>,
    pub system_path: Option<PathBuf>,
    pub system: SystemConfig,
    pub metric: MetricSpec,
    pub engine: Engine,
    pub search: SearchOptions,
    pub batch_size: u64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineParams>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_graph_input(path: &Path) -> Result<GraphInput> {
    let src = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read graph file {}", path.display()))?;
    let graph = load_forward_graph(&src)
        .with_context(|| format!("invalid graph file {}", path.display()))?;
    Ok(GraphInput {
        path: path.to_path_buf(),
        name: graph.name().to_string(),
        sha256: sha256_hex(src.as_bytes()),
        graph,
    })
}

pub fn load_graphs(paths: &[PathBuf]) -> Result<Vec<GraphInput>> {
    let graphs = paths
        .iter()
        .map(|p| load_graph_input(p))
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = graphs.iter().map(|g| g.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        bail!(
            "two graphs are named `{}`; graph names must be unique",
            w[0]
        );
    }
    Ok(graphs)
}

pub fn load_system(path: Option<&Path>) -> Result<SystemConfig> {
    let cfg = match path {
        None => SystemConfig::default(),
        Some(p) => {
            let src = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read system config {}", p.display()))?;
            SystemConfig::from_str_any(&src)
                .with_context(|| format!("invalid system config {}", p.display()))?
        }
    };
    cfg.validate().context("invalid system config")?;
    Ok(cfg)
}

impl RunManifest {
    /// Hash of everything that determines the output. File paths are left
    /// out so that moving inputs does not change it; file contents are in.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            command: &'a str,
            graphs: Vec<&'a str>,
            system: &'a SystemConfig,
            metric: &'a MetricSpec,
            engine: Engine,
            search: &'a SearchOptions,
            batch_size: u64,
            k: usize,
            pipeline: &'a Option<PipelineParams>,
        }
        let keyed = Keyed {
            command: &self.command,
            graphs: self.graphs.iter().map(|g| g.sha256.as_str()).collect(),
            system: &self.system,
            metric: &self.metric,
            engine: self.engine,
            search: &self.search,
            batch_size: self.batch_size,
            k: self.k,
            pipeline: &self.pipeline,
        };
        sha256_hex(&serde_json::to_vec(&keyed).expect("manifest serializes"))
    }
}
