//! GEMM/CONV followed by an activation is merged into one FUSED op that runs
//! on a tensor and a vector core at the same time.

use std::collections::{BTreeMap, BTreeSet};

use super::training::{stash_total, TrainingGraph};
use super::{Affinity, OpKind, Operator, OperatorGraph};

fn fusable(g: &OperatorGraph, u: usize, v: usize) -> bool {
    let (a, b) = (g.op(u), g.op(v));
    a.is_tensor_kind()
        && b.kind == OpKind::Vector
        && a.pass == b.pass
        && a.collective.is_none()
        && b.collective.is_none()
        && g.succs(u) == [v]
        && g.preds(v) == [u]
}

pub fn apply_fusion(tg: &TrainingGraph) -> TrainingGraph {
    let g = &tg.graph;
    let mut pair_of: BTreeMap<usize, usize> = BTreeMap::new();
    for &u in g.topo_indices() {
        if let [v] = g.succs(u) {
            if fusable(g, u, *v) {
                pair_of.insert(u, *v);
            }
        }
    }
    if pair_of.is_empty() {
        return tg.clone();
    }

    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let absorbed: BTreeSet<usize> = pair_of.values().copied().collect();
    let mut ops = Vec::with_capacity(g.len() - pair_of.len());
    for (i, op) in g.ops().iter().enumerate() {
        if absorbed.contains(&i) {
            continue;
        }
        if let Some(&v) = pair_of.get(&i) {
            let vec_op = g.op(v);
            let id = format!("{}+{}", op.id, vec_op.id);
            rename.insert(op.id.clone(), id.clone());
            rename.insert(vec_op.id.clone(), id.clone());
            ops.push(Operator {
                id,
                kind: OpKind::Fused,
                pass: op.pass,
                affinity: Affinity::Both,
                tensor: op.tensor,
                elements: vec_op.elements,
                param_bytes: op.param_bytes + vec_op.param_bytes,
                activation_bytes: vec_op.activation_bytes,
                mirror_of: op.mirror_of.clone(),
                collective: None,
            });
        } else {
            ops.push(op.clone());
        }
    }

    let map = |id: &String| rename.get(id).cloned().unwrap_or_else(|| id.clone());
    let edges: Vec<(String, String)> = g
        .edge_ids()
        .iter()
        .map(|(s, d)| (map(s), map(d)))
        .filter(|(s, d)| s != d)
        .collect();
    let graph = OperatorGraph::new(g.name(), ops, &edges).expect("fusion preserves acyclicity");

    let mirror_map = tg
        .mirror_map
        .iter()
        .map(|(k, m)| {
            let mut m = m.clone();
            m.grad_act = map(&m.grad_act);
            m.grad_weight = m.grad_weight.as_ref().map(map);
            m.update = m.update.as_ref().map(map);
            (k.clone(), m)
        })
        .collect();
    let mut stash: Vec<_> = tg
        .stash
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.producer = map(&s.producer);
            s.consumer = map(&s.consumer);
            s
        })
        .collect();
    stash.sort();
    stash.dedup();
    let mut fused = BTreeMap::new();
    for (orig, cur) in &tg.fused {
        fused.insert(orig.clone(), map(cur));
    }
    for (old, new) in &rename {
        fused.insert(old.clone(), new.clone());
    }
    TrainingGraph {
        graph,
        mirror_map,
        stash_bytes: tg.stash_bytes.max(stash_total(&stash)),
        stash,
        fused,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::training::{build_training_graph, TrainingOptions};

    fn tg(ops: Vec<Operator>, edges: &[(&str, &str)]) -> TrainingGraph {
        let edges: Vec<(String, String)> = edges
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let fwd = OperatorGraph::new("t", ops, &edges).unwrap();
        build_training_graph(&fwd, &TrainingOptions::default()).unwrap()
    }

    #[test]
    fn gemm_relu_fuses() {
        let g = tg(
            vec![
                Operator::gemm("fc", 8, 8, 8).with_activation(128),
                Operator::vector("relu", 64).with_activation(100),
            ],
            &[("fc", "relu")],
        );
        let f = apply_fusion(&g);
        let fused = f.graph.get("fc+relu").expect("fused op");
        assert_eq!(fused.kind, OpKind::Fused);
        assert_eq!(fused.affinity, Affinity::Both);
        assert_eq!(fused.activation_bytes, 100);
        assert_eq!(fused.tensor.unwrap().m, 8);
        assert_eq!(fused.elements, Some(64));
        assert!(f.graph.get("fc").is_none() && f.graph.get("relu").is_none());
        assert_eq!(f.graph.len(), g.graph.len() - 1);
        assert_eq!(f.fused["fc"], "fc+relu");
    }

    #[test]
    fn fan_out_blocks_fusion() {
        let g = tg(
            vec![
                Operator::gemm("fc", 8, 8, 8),
                Operator::vector("a", 64),
                Operator::vector("b", 64),
            ],
            &[("fc", "a"), ("fc", "b")],
        );
        let f = apply_fusion(&g);
        assert!(f.graph.get("fc").is_some());
        assert!(f
            .graph
            .ops()
            .iter()
            .all(|o| o.kind != OpKind::Fused || o.pass != crate::graph::Pass::Forward));
    }

    #[test]
    fn no_vector_ops_is_identity() {
        let ops = vec![Operator::gemm("a", 8, 8, 8), Operator::gemm("b", 8, 8, 8)];
        let fwd = OperatorGraph::new("t", ops, &[("a".into(), "b".into())]).unwrap();
        // no loss op either: fuse the bare forward graph
        let bare = TrainingGraph {
            graph: fwd.clone(),
            mirror_map: Default::default(),
            stash: vec![],
            stash_bytes: 0,
            fused: Default::default(),
        };
        assert_eq!(apply_fusion(&bare), bare);
    }

    #[test]
    fn mirror_survives_backward_fusion() {
        // norm -> fc fuses only in the backward pass, as fc.dx + norm.dx
        let g = tg(
            vec![
                Operator::vector("norm", 64),
                Operator::gemm("fc", 8, 8, 8).with_params(128),
                Operator::vector("act", 64),
            ],
            &[("norm", "fc"), ("fc", "act")],
        );
        let f = apply_fusion(&g);
        assert!(f.graph.get("fc.dx+norm.dx").is_some());
        assert!(f.mirror_property_holds());
    }
}
