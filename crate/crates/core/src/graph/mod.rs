//! Operator graphs for DNN training workloads.
//!
//! An [`OperatorGraph`] arrives holding only forward-pass operators. The
//! [`training`] module mirrors it into backward, loss and update operators and
//! [`fusion`] merges tensor/vector pairs that can run back to back on chip.

pub mod fusion;
pub mod io;
pub mod training;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fusion::apply_fusion;
pub use io::{load_forward_graph, load_graph, write_graph};
pub use training::{
    build_training_graph, grad_act_id, grad_weight_id, update_id, MirrorEntry, StashEdge,
    TrainingGraph, TrainingOptions, LOSS_ID,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("edges do not form a DAG (cycle through {0})")]
    Cycle(String),
    #[error("edge references unknown operator `{0}`")]
    UnknownNode(String),
    #[error("duplicate operator id `{0}`")]
    DuplicateId(String),
    #[error("operator `{id}`: kind {kind} cannot run with {affinity} affinity")]
    Affinity {
        id: String,
        kind: OpKind,
        affinity: Affinity,
    },
    #[error("operator `{0}`: shape dimensions must be >= 1")]
    InvalidShape(String),
    #[error("operator `{0}` is not a forward-pass operator")]
    NonForwardInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Gemm,
    Conv,
    Vector,
    Fused,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Gemm => "gemm",
            OpKind::Conv => "conv",
            OpKind::Vector => "vector",
            OpKind::Fused => "fused",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Forward,
    Backward,
    Update,
    Loss,
}

/// Which core type(s) an operator occupies while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affinity {
    Tensor,
    Vector,
    Both,
}

impl Affinity {
    pub fn uses_tensor(self) -> bool {
        matches!(self, Affinity::Tensor | Affinity::Both)
    }

    pub fn uses_vector(self) -> bool {
        matches!(self, Affinity::Vector | Affinity::Both)
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Affinity::Tensor => "tensor",
            Affinity::Vector => "vector",
            Affinity::Both => "both",
        };
        f.write_str(s)
    }
}

/// Reduction-form matmul dims: output is `m x n`, reduction depth `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

impl TensorShape {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        Self { m, n, k }
    }

    pub fn macs(&self) -> u64 {
        self.m * self.n * self.k
    }
}

/// Collective communication carried by a vector operator (tensor-parallel allreduce).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collective {
    pub bytes: u64,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operator {
    pub id: String,
    pub kind: OpKind,
    pub pass: Pass,
    pub affinity: Affinity,
    pub tensor: Option<TensorShape>,
    pub elements: Option<u64>,
    pub param_bytes: u64,
    pub activation_bytes: u64,
    /// Forward operator this one was derived from (backward and update ops).
    pub mirror_of: Option<String>,
    pub collective: Option<Collective>,
}

impl Operator {
    pub fn gemm(id: impl Into<String>, m: u64, n: u64, k: u64) -> Self {
        Self::tensor_op(id, OpKind::Gemm, TensorShape::new(m, n, k))
    }

    pub fn conv(id: impl Into<String>, m: u64, n: u64, k: u64) -> Self {
        Self::tensor_op(id, OpKind::Conv, TensorShape::new(m, n, k))
    }

    fn tensor_op(id: impl Into<String>, kind: OpKind, shape: TensorShape) -> Self {
        Self {
            id: id.into(),
            kind,
            pass: Pass::Forward,
            affinity: Affinity::Tensor,
            tensor: Some(shape),
            elements: None,
            param_bytes: 0,
            activation_bytes: 0,
            mirror_of: None,
            collective: None,
        }
    }

    pub fn vector(id: impl Into<String>, elements: u64) -> Self {
        Self {
            id: id.into(),
            kind: OpKind::Vector,
            pass: Pass::Forward,
            affinity: Affinity::Vector,
            tensor: None,
            elements: Some(elements),
            param_bytes: 0,
            activation_bytes: 0,
            mirror_of: None,
            collective: None,
        }
    }

    pub fn with_params(mut self, bytes: u64) -> Self {
        self.param_bytes = bytes;
        self
    }

    pub fn with_activation(mut self, bytes: u64) -> Self {
        self.activation_bytes = bytes;
        self
    }

    pub fn with_pass(mut self, pass: Pass) -> Self {
        self.pass = pass;
        self
    }

    pub fn with_affinity(mut self, affinity: Affinity) -> Self {
        self.affinity = affinity;
        self
    }

    pub fn is_tensor_kind(&self) -> bool {
        matches!(self.kind, OpKind::Gemm | OpKind::Conv)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let affinity_ok = match self.kind {
            OpKind::Gemm | OpKind::Conv => {
                matches!(self.affinity, Affinity::Tensor | Affinity::Both)
            }
            OpKind::Vector => self.affinity == Affinity::Vector,
            OpKind::Fused => self.affinity == Affinity::Both,
        };
        if !affinity_ok {
            return Err(GraphError::Affinity {
                id: self.id.clone(),
                kind: self.kind,
                affinity: self.affinity,
            });
        }
        let need_tensor = matches!(self.kind, OpKind::Gemm | OpKind::Conv | OpKind::Fused);
        let need_vector = matches!(self.kind, OpKind::Vector | OpKind::Fused);
        match self.tensor {
            Some(s) if s.m == 0 || s.n == 0 || s.k == 0 => {
                return Err(GraphError::InvalidShape(self.id.clone()))
            }
            None if need_tensor => return Err(GraphError::InvalidShape(self.id.clone())),
            _ => {}
        }
        match self.elements {
            Some(0) => return Err(GraphError::InvalidShape(self.id.clone())),
            None if need_vector => return Err(GraphError::InvalidShape(self.id.clone())),
            _ => {}
        }
        Ok(())
    }
}

/// A validated operator DAG. Operators are kept in insertion order and
/// addressed by dense indices; `index` maps ids back to positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorGraph {
    name: String,
    ops: Vec<Operator>,
    edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    index: BTreeMap<String, usize>,
    topo: Vec<usize>,
}

impl OperatorGraph {
    /// Builds and validates a graph. Duplicate edges are collapsed.
    pub fn new(
        name: impl Into<String>,
        ops: Vec<Operator>,
        edges: &[(String, String)],
    ) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, op) in ops.iter().enumerate() {
            op.validate()?;
            if index.insert(op.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId(op.id.clone()));
            }
        }
        let mut edge_set = BTreeSet::new();
        for (src, dst) in edges {
            let s = *index
                .get(src)
                .ok_or_else(|| GraphError::UnknownNode(src.clone()))?;
            let d = *index
                .get(dst)
                .ok_or_else(|| GraphError::UnknownNode(dst.clone()))?;
            if s == d {
                return Err(GraphError::Cycle(src.clone()));
            }
            edge_set.insert((s, d));
        }
        Self::from_indexed(name.into(), ops, index, edge_set.into_iter().collect())
    }

    fn from_indexed(
        name: String,
        ops: Vec<Operator>,
        index: BTreeMap<String, usize>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let n = ops.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(s, d) in &edges {
            succs[s].push(d);
            preds[d].push(s);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_by(|&a, &b| ops[a].id.cmp(&ops[b].id));
        }
        let topo = kahn_order(&ops, &preds, &succs).ok_or_else(|| {
            let stuck = ops
                .iter()
                .enumerate()
                .find(|(i, _)| !preds[*i].is_empty())
                .map(|(_, op)| op.id.clone())
                .unwrap_or_default();
            GraphError::Cycle(stuck)
        })?;
        Ok(Self {
            name,
            ops,
            edges,
            preds,
            succs,
            index,
            topo,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn op(&self, idx: usize) -> &Operator {
        &self.ops[idx]
    }

    pub fn get(&self, id: &str) -> Option<&Operator> {
        self.index.get(id).map(|&i| &self.ops[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Edges as `(src, dst)` index pairs, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_ids(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(s, d)| (self.ops[s].id.clone(), self.ops[d].id.clone()))
            .collect()
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        match (self.index_of(src), self.index_of(dst)) {
            (Some(s), Some(d)) => self.succs[s].contains(&d),
            _ => false,
        }
    }

    pub fn preds(&self, idx: usize) -> &[usize] {
        &self.preds[idx]
    }

    pub fn succs(&self, idx: usize) -> &[usize] {
        &self.succs[idx]
    }

    /// Topological order as indices; ties broken by op id.
    pub fn topo_indices(&self) -> &[usize] {
        &self.topo
    }

    pub fn topological_order(&self) -> Vec<String> {
        self.topo.iter().map(|&i| self.ops[i].id.clone()).collect()
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.preds[i].is_empty())
    }

    pub fn sinks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.succs[i].is_empty())
    }

    pub fn rename(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    /// Subgraph induced by the given op indices, preserving their relative order.
    pub fn induced(&self, name: impl Into<String>, keep: &BTreeSet<usize>) -> OperatorGraph {
        let ops: Vec<Operator> = keep.iter().map(|&i| self.ops[i].clone()).collect();
        let edges: Vec<(String, String)> = self
            .edges
            .iter()
            .filter(|(s, d)| keep.contains(s) && keep.contains(d))
            .map(|&(s, d)| (self.ops[s].id.clone(), self.ops[d].id.clone()))
            .collect();
        OperatorGraph::new(name, ops, &edges).expect("induced subgraph of a DAG is a DAG")
    }

    /// Set of op indices reachable from `from` (excluding `from`).
    pub fn reachable_from(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = self.succs[from].clone();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend_from_slice(&self.succs[v]);
            }
        }
        seen
    }
}

/// Kahn's algorithm with a min-heap on op id for deterministic ties.
fn kahn_order(ops: &[Operator], preds: &[Vec<usize>], succs: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<(&str, usize)>> = indeg
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse((ops[i].id.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(ops.len());
    while let Some(Reverse((_, v))) = heap.pop() {
        order.push(v);
        for &w in &succs[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(Reverse((ops[w].id.as_str(), w)));
            }
        }
    }
    (order.len() == ops.len()).then_some(order)
}

/// Deterministic topological order of op ids (ties by id).
pub fn topological_order(g: &OperatorGraph) -> Vec<String> {
    g.topological_order()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn diamond_order_breaks_ties_by_id() {
        let ops = ["D", "C", "B", "A"]
            .iter()
            .map(|id| Operator::gemm(*id, 4, 4, 4))
            .collect();
        let g = OperatorGraph::new(
            "d",
            ops,
            &[e("A", "B"), e("A", "C"), e("B", "D"), e("C", "D")],
        )
        .unwrap();
        assert_eq!(g.topological_order(), vec!["A", "B", "C", "D"]);
        assert_eq!(g.edges().len(), 4);
    }

    #[test]
    fn chain_order_follows_edges() {
        let ops = ["A", "B", "C"]
            .iter()
            .map(|id| Operator::gemm(*id, 4, 4, 4))
            .collect();
        let g = OperatorGraph::new("c", ops, &[e("C", "B"), e("B", "A")]).unwrap();
        assert_eq!(g.topological_order(), vec!["C", "B", "A"]);
    }

    #[test]
    fn single_node() {
        let g = OperatorGraph::new("s", vec![Operator::gemm("x", 1, 1, 1)], &[]).unwrap();
        assert_eq!(g.topological_order(), vec!["x"]);
    }

    #[test]
    fn cycle_rejected() {
        let ops = ["A", "B"]
            .iter()
            .map(|id| Operator::vector(*id, 4))
            .collect();
        let err = OperatorGraph::new("c", ops, &[e("A", "B"), e("B", "A")]).unwrap_err();
        assert!(matches!(err, GraphError::Cycle(_)));
    }

    #[test]
    fn unknown_endpoint_rejected() {
        let ops = ["A", "B"]
            .iter()
            .map(|id| Operator::vector(*id, 4))
            .collect();
        let err = OperatorGraph::new("c", ops, &[e("A", "Z")]).unwrap_err();
        assert_eq!(err, GraphError::UnknownNode("Z".into()));
    }

    #[test]
    fn affinity_mismatch_rejected() {
        let op = Operator::vector("v", 8).with_affinity(Affinity::Tensor);
        assert!(matches!(op.validate(), Err(GraphError::Affinity { .. })));
        let op = Operator::gemm("g", 8, 8, 8).with_affinity(Affinity::Vector);
        assert!(matches!(op.validate(), Err(GraphError::Affinity { .. })));
        let op = Operator::gemm("g", 8, 8, 8).with_affinity(Affinity::Both);
        assert!(op.validate().is_ok());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Operator::gemm("g", 0, 8, 8).validate().is_err());
        assert!(Operator::vector("v", 0).validate().is_err());
    }
}
