//! Tensor-model-parallel splitting of a training graph across `width` devices.

use std::collections::BTreeMap;

use crate::graph::{
    build_training_graph, grad_act_id, Collective, Operator, OperatorGraph, Pass, TrainingGraph,
    TrainingOptions,
};

use super::PipelineError;

fn split(value: u64, width: u32, what: &str, id: &str) -> Result<u64, PipelineError> {
    let w = u64::from(width);
    if !value.is_multiple_of(w) {
        return Err(PipelineError::IndivisibleShape(format!(
            "{id}: {what} = {value} is not divisible by {width}"
        )));
    }
    Ok(value / w)
}

fn allreduce(id: String, bytes: u64, width: u32, element_bytes: u64, pass: Pass) -> Operator {
    let mut op = Operator::vector(id, bytes.div_ceil(element_bytes.max(1)).max(1))
        .with_pass(pass)
        .with_activation(bytes);
    op.collective = Some(Collective { bytes, width });
    op
}

/// Inserts `new` directly after `after`: every out-edge of `after` now
/// leaves from `new`.
fn insert_after(edges: &mut Vec<(String, String)>, after: &str, new: &str) {
    for e in edges.iter_mut() {
        if e.0 == after {
            e.0 = new.to_string();
        }
    }
    edges.push((after.to_string(), new.to_string()));
}

/// Splits parameterized tensor ops alternately by columns and rows.
///
/// A column-split op opens a block: its output dimension `N`, parameters and
/// activation are divided by `width`, and following parameter-free ops in the
/// block work on the slice. The next parameterized op is row-split (`K` and
/// parameters divided) and is followed by an all-reduce that closes the block.
/// The activation gradient of each column-split op is all-reduced as well.
/// The input must be an unfused training graph; fusion can run afterwards.
pub fn apply_tmp(
    tg: &TrainingGraph,
    width: u32,
    opts: &TrainingOptions,
) -> Result<TrainingGraph, PipelineError> {
    if width == 0 || !width.is_power_of_two() {
        return Err(PipelineError::InvalidParams(format!(
            "tensor-model-parallel width {width} is not a power of two"
        )));
    }
    if width == 1 {
        return Ok(tg.clone());
    }
    let fwd = tg.forward_graph();
    let eb = opts.element_bytes;
    let mut ops: BTreeMap<usize, Operator> = BTreeMap::new();
    let mut edges = fwd.edge_ids();
    let mut extra = Vec::new();
    let mut columns = Vec::new();
    let mut open: Option<String> = None;

    for &v in fwd.topo_indices() {
        let mut op = fwd.op(v).clone();
        let parameterized = op.is_tensor_kind() && op.param_bytes > 0;
        match (&open, parameterized) {
            (None, true) => {
                let s = op.tensor.as_mut().expect("tensor op has a shape");
                s.n = split(s.n, width, "N", &op.id)?;
                op.param_bytes = split(op.param_bytes, width, "parameter bytes", &op.id)?;
                op.activation_bytes =
                    split(op.activation_bytes, width, "activation bytes", &op.id)?;
                columns.push(op.id.clone());
                open = Some(op.id.clone());
            }
            (Some(_), true) => {
                let s = op.tensor.as_mut().expect("tensor op has a shape");
                s.k = split(s.k, width, "K", &op.id)?;
                op.param_bytes = split(op.param_bytes, width, "parameter bytes", &op.id)?;
                let ar = allreduce(
                    format!("{}.allreduce", op.id),
                    op.activation_bytes,
                    width,
                    eb,
                    Pass::Forward,
                );
                insert_after(&mut edges, &op.id, &ar.id);
                extra.push(ar);
                open = None;
            }
            (Some(_), false) => {
                if let Some(s) = op.tensor.as_mut() {
                    s.n = split(s.n, width, "N", &op.id)?;
                }
                if let Some(e) = op.elements.as_mut() {
                    *e = split(*e, width, "elements", &op.id)?;
                }
                op.activation_bytes =
                    split(op.activation_bytes, width, "activation bytes", &op.id)?;
                open = Some(op.id.clone());
            }
            (None, false) => {}
        }
        ops.insert(v, op);
    }
    if let Some(last) = open {
        let bytes = ops
            .values()
            .find(|o| o.id == last)
            .map(|o| o.activation_bytes)
            .unwrap_or(0);
        let ar = allreduce(
            format!("{last}.allreduce"),
            bytes * u64::from(width),
            width,
            eb,
            Pass::Forward,
        );
        insert_after(&mut edges, &last, &ar.id);
        extra.push(ar);
    }
    let mut all: Vec<Operator> = ops.into_values().collect();
    all.extend(extra);
    let split_fwd = OperatorGraph::new(fwd.name(), all, &edges)?;
    let base = build_training_graph(&split_fwd, opts)?;

    let mut ops = base.graph.ops().to_vec();
    let mut edges = base.graph.edge_ids();
    for col in &columns {
        let dx_id = grad_act_id(col);
        let dx = base
            .graph
            .get(&dx_id)
            .expect("every forward op has an activation gradient");
        let mut ar = allreduce(
            format!("{dx_id}.allreduce"),
            dx.activation_bytes,
            width,
            eb,
            Pass::Backward,
        );
        ar.mirror_of = Some(col.clone());
        insert_after(&mut edges, &dx_id, &ar.id);
        ops.push(ar);
    }
    let graph = OperatorGraph::new(base.graph.name(), ops, &edges)?;
    Ok(TrainingGraph { graph, ..base })
}
