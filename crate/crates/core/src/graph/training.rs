//! Forward graph -> full training graph (forward, loss, backward, update).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GraphError, OpKind, Operator, OperatorGraph, Pass, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingOptions {
    /// Samples per graph execution; sizes the loss operator.
    pub batch_size: u64,
    /// Bytes per tensor element (2 for bf16).
    pub element_bytes: u64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            element_bytes: 2,
        }
    }
}

/// Backward-pass counterparts of one forward operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorEntry {
    pub grad_act: String,
    pub grad_weight: Option<String>,
    pub update: Option<String>,
}

/// A forward activation kept in HBM until a backward op reads it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StashEdge {
    pub producer: String,
    pub consumer: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGraph {
    pub graph: OperatorGraph,
    /// Keyed by the original forward op id; values track fusion renames.
    pub mirror_map: BTreeMap<String, MirrorEntry>,
    pub stash: Vec<StashEdge>,
    pub stash_bytes: u64,
    /// Original op id -> fused op id, for every op absorbed by fusion.
    pub fused: BTreeMap<String, String>,
}

pub const LOSS_ID: &str = "loss";

pub fn grad_act_id(fwd: &str) -> String {
    format!("{fwd}.dx")
}

pub fn grad_weight_id(fwd: &str) -> String {
    format!("{fwd}.dw")
}

pub fn update_id(fwd: &str) -> String {
    format!("{fwd}.update")
}

/// Sum of activation bytes over distinct stash producers.
pub(crate) fn stash_total(stash: &[StashEdge]) -> u64 {
    let mut seen = BTreeMap::new();
    for s in stash {
        seen.insert(s.producer.as_str(), s.bytes);
    }
    seen.values().sum()
}

/// Synthesizes the training graph.
///
/// Shape rule for a forward GEMM/CONV `(M, N, K)`: the activation gradient is
/// `(M, K, N)` and the weight gradient `(K, N, M)`. Update ops are element-wise
/// over the parameters. Backward edges mirror forward edges in reverse.
pub fn build_training_graph(
    fwd: &OperatorGraph,
    opts: &TrainingOptions,
) -> Result<TrainingGraph, GraphError> {
    if let Some(op) = fwd
        .ops()
        .iter()
        .find(|op| op.pass != Pass::Forward || op.kind == OpKind::Fused)
    {
        return Err(GraphError::NonForwardInput(op.id.clone()));
    }
    let eb = opts.element_bytes.max(1);
    let mut ops: Vec<Operator> = fwd.ops().to_vec();
    let mut edges = fwd.edge_ids();
    let mut mirror_map = BTreeMap::new();
    let mut stash = Vec::new();

    if fwd.is_empty() {
        let graph = OperatorGraph::new(fwd.name(), ops, &edges)?;
        return Ok(TrainingGraph {
            graph,
            mirror_map,
            stash,
            stash_bytes: 0,
            fused: BTreeMap::new(),
        });
    }

    let loss = Operator::vector(LOSS_ID, opts.batch_size.max(1))
        .with_pass(Pass::Loss)
        .with_activation(opts.batch_size.max(1) * eb);
    ops.push(loss);

    for op in fwd.ops() {
        let dx_id = grad_act_id(&op.id);
        let mut dx = Operator {
            id: dx_id.clone(),
            kind: op.kind,
            pass: Pass::Backward,
            affinity: op.affinity,
            tensor: op.tensor.map(|s| TensorShape::new(s.m, s.k, s.n)),
            elements: op.elements,
            param_bytes: op.param_bytes,
            activation_bytes: op.activation_bytes,
            mirror_of: Some(op.id.clone()),
            collective: None,
        };
        if let Some(s) = op.tensor {
            dx.activation_bytes = s.m * s.k * eb;
        }
        ops.push(dx);

        let mut entry = MirrorEntry {
            grad_act: dx_id,
            grad_weight: None,
            update: None,
        };
        if op.param_bytes > 0 {
            let dw_id = grad_weight_id(&op.id);
            ops.push(Operator {
                id: dw_id.clone(),
                kind: op.kind,
                pass: Pass::Backward,
                affinity: op.affinity,
                tensor: op.tensor.map(|s| TensorShape::new(s.k, s.n, s.m)),
                elements: op.elements,
                param_bytes: 0,
                activation_bytes: op.param_bytes,
                mirror_of: Some(op.id.clone()),
                collective: None,
            });
            let up_id = update_id(&op.id);
            let mut update = Operator::vector(up_id.clone(), op.param_bytes.div_ceil(eb))
                .with_pass(Pass::Update)
                .with_params(op.param_bytes);
            update.mirror_of = Some(op.id.clone());
            ops.push(update);
            edges.push((dw_id.clone(), up_id.clone()));
            entry.grad_weight = Some(dw_id);
            entry.update = Some(up_id);
        }
        mirror_map.insert(op.id.clone(), entry);
    }

    for sink in fwd.sinks() {
        let id = &fwd.op(sink).id;
        edges.push((id.clone(), LOSS_ID.to_string()));
        let entry = &mirror_map[id];
        edges.push((LOSS_ID.to_string(), entry.grad_act.clone()));
        if let Some(dw) = &entry.grad_weight {
            edges.push((LOSS_ID.to_string(), dw.clone()));
        }
    }
    for &(u, v) in fwd.edges() {
        let (u_id, v_id) = (&fwd.op(u).id, &fwd.op(v).id);
        let (eu, ev) = (&mirror_map[u_id], &mirror_map[v_id]);
        edges.push((ev.grad_act.clone(), eu.grad_act.clone()));
        if let Some(dw) = &eu.grad_weight {
            edges.push((ev.grad_act.clone(), dw.clone()));
        }
        // v's backward ops read v's input, i.e. u's stashed output
        let bytes = fwd.op(u).activation_bytes;
        stash.push(StashEdge {
            producer: u_id.clone(),
            consumer: ev.grad_act.clone(),
            bytes,
        });
        if let Some(dw) = &ev.grad_weight {
            stash.push(StashEdge {
                producer: u_id.clone(),
                consumer: dw.clone(),
                bytes,
            });
        }
    }
    stash.sort();
    let stash_bytes = stash_total(&stash);
    let graph = OperatorGraph::new(fwd.name(), ops, &edges)?;
    Ok(TrainingGraph {
        graph,
        mirror_map,
        stash,
        stash_bytes,
        fused: BTreeMap::new(),
    })
}

impl TrainingGraph {
    /// The forward-pass subgraph (after any fusion).
    pub fn forward_graph(&self) -> OperatorGraph {
        let keep: BTreeSet<usize> = (0..self.graph.len())
            .filter(|&i| self.graph.op(i).pass == Pass::Forward)
            .collect();
        self.graph.induced(self.graph.name(), &keep)
    }

    pub fn total_param_bytes(&self) -> u64 {
        self.graph
            .ops()
            .iter()
            .filter(|op| op.pass == Pass::Forward)
            .map(|op| op.param_bytes)
            .sum()
    }

    /// Restricts the training graph to the given op indices (a pipeline stage).
    pub fn induced(&self, name: impl Into<String>, keep: &BTreeSet<usize>) -> TrainingGraph {
        let graph = self.graph.induced(name, keep);
        let mirror_map = self
            .mirror_map
            .iter()
            .filter(|(orig, _)| {
                let current = self.fused.get(*orig).unwrap_or(orig);
                graph.get(current).is_some()
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let stash: Vec<StashEdge> = self
            .stash
            .iter()
            .filter(|s| graph.get(&s.consumer).is_some())
            .cloned()
            .collect();
        let stash_bytes = stash_total(&stash);
        let fused = self
            .fused
            .iter()
            .filter(|(_, new)| graph.get(new).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        TrainingGraph {
            graph,
            mirror_map,
            stash,
            stash_bytes,
            fused,
        }
    }

    /// True when every forward edge `(u, v)` has the mirrored backward edge
    /// `(dx(v), dx(u))` among activation-gradient ops. After fusion an op
    /// stands for all forward ops fused into it; the edge holds if some pair
    /// of members is mirrored or their gradients were fused into one op.
    pub fn mirror_property_holds(&self) -> bool {
        let members = |id: &str| -> Vec<&MirrorEntry> {
            self.mirror_map
                .iter()
                .filter(|(orig, _)| self.fused.get(*orig).unwrap_or(orig) == id)
                .map(|(_, m)| m)
                .collect()
        };
        self.graph.edges().iter().all(|&(s, d)| {
            let (u, v) = (self.graph.op(s), self.graph.op(d));
            if u.pass != Pass::Forward || v.pass != Pass::Forward {
                return true;
            }
            let (us, vs) = (members(&u.id), members(&v.id));
            us.iter().any(|mu| {
                vs.iter().any(|mv| {
                    mu.grad_act == mv.grad_act || self.graph.has_edge(&mv.grad_act, &mu.grad_act)
                })
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> TrainingOptions {
        TrainingOptions {
            batch_size: 4,
            element_bytes: 2,
        }
    }

    /// Enumeration oracle for op counts: one fwd, one loss, one dx per op,
    /// plus dw and update per parameterized op.
    fn expected_count(fwd: &OperatorGraph) -> usize {
        let params = fwd.ops().iter().filter(|o| o.param_bytes > 0).count();
        2 * fwd.len() + 1 + 2 * params
    }

    #[test]
    fn single_gemm_with_params_gives_five_ops() {
        let fwd = OperatorGraph::new(
            "g",
            vec![Operator::gemm("A", 4, 8, 16).with_params(256)],
            &[],
        )
        .unwrap();
        let tg = build_training_graph(&fwd, &opts()).unwrap();
        assert_eq!(tg.graph.len(), 5);
        assert_eq!(tg.graph.len(), expected_count(&fwd));
        let dx = tg.graph.get("A.dx").unwrap();
        assert_eq!(dx.tensor, Some(TensorShape::new(4, 16, 8)));
        let dw = tg.graph.get("A.dw").unwrap();
        assert_eq!(dw.tensor, Some(TensorShape::new(16, 8, 4)));
        let up = tg.graph.get("A.update").unwrap();
        assert_eq!(up.elements, Some(128));
        assert_eq!(up.pass, Pass::Update);
        assert!(tg.graph.has_edge("A.dw", "A.update"));
        assert_eq!(tg.stash_bytes, 0);
    }

    #[test]
    fn single_vector_gives_three_ops() {
        let fwd = OperatorGraph::new("v", vec![Operator::vector("r", 64)], &[]).unwrap();
        let tg = build_training_graph(&fwd, &opts()).unwrap();
        assert_eq!(tg.graph.len(), 3);
        assert_eq!(tg.graph.len(), expected_count(&fwd));
        assert_eq!(tg.graph.get(LOSS_ID).unwrap().elements, Some(4));
    }

    #[test]
    fn chain_backward_reverses_edges() {
        let fwd = OperatorGraph::new(
            "c",
            vec![
                Operator::gemm("A", 4, 4, 4)
                    .with_params(32)
                    .with_activation(32),
                Operator::gemm("B", 4, 4, 4)
                    .with_params(32)
                    .with_activation(32),
            ],
            &[("A".into(), "B".into())],
        )
        .unwrap();
        let tg = build_training_graph(&fwd, &opts()).unwrap();
        assert!(tg.graph.has_edge("B.dx", "A.dx"));
        assert!(tg.graph.has_edge("B.dx", "A.dw"));
        let order = tg.graph.topological_order();
        let pos = |id: &str| order.iter().position(|x| x == id).unwrap();
        assert!(pos("B.dx") < pos("A.dx"));
        assert!(tg.mirror_property_holds());
        // A's output is read by B's backward ops
        assert_eq!(tg.stash_bytes, 32);
        assert_eq!(tg.forward_graph(), fwd);
    }

    #[test]
    fn rejects_non_forward_input() {
        let fwd = OperatorGraph::new(
            "x",
            vec![Operator::vector("r", 4).with_pass(Pass::Backward)],
            &[],
        )
        .unwrap();
        assert!(matches!(
            build_training_graph(&fwd, &opts()),
            Err(GraphError::NonForwardInput(_))
        ));
    }
}
