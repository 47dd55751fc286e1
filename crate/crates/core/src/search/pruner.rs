//! Breadth-first walk of the dimension tree with subtree pruning.
//!
//! A node's children are its dimensions with one axis halved. Children that
//! beat the parent are explored further and the others are cut. When every
//! child is worse, the walk looks a fixed number of levels deeper
//! (hysteresis) and resumes from any node there that beats the parent;
//! otherwise the whole subtree is dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::arch::CoreDims;
use crate::metric::better;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepDecision {
    /// Continue into these children (indices into the slice given).
    Explore(Vec<usize>),
    /// Every child is worse than the parent.
    Hysteresis,
}

/// Decision for one parent given its evaluated children.
pub fn prune_step(parent: Option<f64>, children: &[Option<f64>]) -> StepDecision {
    let improving: Vec<usize> = (0..children.len())
        .filter(|&i| better(children[i], parent))
        .collect();
    if improving.is_empty() && !children.is_empty() {
        StepDecision::Hysteresis
    } else {
        StepDecision::Explore(improving)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "state", content = "metric")]
pub enum NodeState {
    Unevaluated,
    Evaluated(Option<f64>),
    /// Not even the smallest core counts fit the budget at these dims.
    Infeasible,
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Tc,
    Vc,
    Exhaustive,
}

/// One line of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub seq: usize,
    pub sweep: Sweep,
    pub round: u32,
    pub node: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub dims: CoreDims,
    /// Core counts `(tensor, vector)` of the best design at the node.
    pub counts: Option<(u32, u32)>,
    pub metric: Option<f64>,
    pub decision: &'static str,
}

/// Source of node evaluations for the walk.
pub trait NodeOracle {
    /// Makes sure all of `dims` are evaluated; may run them concurrently.
    fn evaluate(&mut self, dims: &[CoreDims]);
    /// `Evaluated` or `Infeasible` for anything passed to `evaluate`.
    fn state(&self, dims: CoreDims) -> NodeState;
    fn best_counts(&self, dims: CoreDims) -> Option<(u32, u32)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Anchor {
    /// No feasible ancestor yet: explore every child.
    Open,
    Metric(Option<f64>),
}

#[derive(Debug, Clone)]
pub struct DimTree {
    pub min_dim: u32,
    pub hysteresis_levels: u32,
    states: BTreeMap<CoreDims, NodeState>,
    expanded: BTreeSet<(CoreDims, Sweep)>,
    trace: Vec<TraceRecord>,
}

impl DimTree {
    pub fn new(min_dim: u32, hysteresis_levels: u32) -> Self {
        Self {
            min_dim,
            hysteresis_levels,
            states: BTreeMap::new(),
            expanded: BTreeSet::new(),
            trace: Vec::new(),
        }
    }

    pub fn children(&self, d: CoreDims, sweep: Sweep) -> Vec<CoreDims> {
        let half = |x: u32| (x / 2 >= self.min_dim).then_some(x / 2);
        match sweep {
            Sweep::Tc => {
                let mut out = Vec::new();
                if let Some(r) = half(d.tc_rows) {
                    out.push(CoreDims::new(r, d.tc_cols, d.vc_width));
                }
                if let Some(c) = half(d.tc_cols) {
                    out.push(CoreDims::new(d.tc_rows, c, d.vc_width));
                }
                out
            }
            Sweep::Vc => half(d.vc_width)
                .map(|w| CoreDims::new(d.tc_rows, d.tc_cols, w))
                .into_iter()
                .collect(),
            Sweep::Exhaustive => Vec::new(),
        }
    }

    pub fn state(&self, d: CoreDims) -> NodeState {
        self.states
            .get(&d)
            .copied()
            .unwrap_or(NodeState::Unevaluated)
    }

    pub fn states(&self) -> &BTreeMap<CoreDims, NodeState> {
        &self.states
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace
    }

    /// Subtree roots that were cut and never reached another way.
    pub fn pruned_count(&self) -> usize {
        self.states
            .values()
            .filter(|s| matches!(s, NodeState::Pruned))
            .count()
    }

    fn record(
        &mut self,
        oracle: &dyn NodeOracle,
        sweep: Sweep,
        round: u32,
        d: CoreDims,
        parent: Option<CoreDims>,
        decision: &'static str,
    ) {
        let metric = match oracle.state(d) {
            NodeState::Evaluated(m) => m,
            _ => None,
        };
        self.trace.push(TraceRecord {
            seq: self.trace.len(),
            sweep,
            round,
            node: d.to_string(),
            parent: parent.map(|p| p.to_string()),
            dims: d,
            counts: oracle.best_counts(d),
            metric,
            decision,
        });
    }

    fn sync(&mut self, oracle: &dyn NodeOracle, dims: &[CoreDims]) {
        for &d in dims {
            let s = oracle.state(d);
            match self.states.get(&d) {
                Some(NodeState::Pruned) | None => {
                    self.states.insert(d, s);
                }
                _ => {}
            }
        }
    }

    fn mark_pruned(&mut self, d: CoreDims) {
        if !self.expanded.iter().any(|(x, _)| *x == d) {
            self.states.insert(d, NodeState::Pruned);
        }
    }

    fn anchor_of(&self, oracle: &dyn NodeOracle, d: CoreDims, inherited: Anchor) -> Anchor {
        match oracle.state(d) {
            NodeState::Evaluated(m) => Anchor::Metric(m),
            _ => inherited,
        }
    }

    /// Walks the subtree under `root` for one sweep kind.
    pub fn walk(&mut self, root: CoreDims, sweep: Sweep, round: u32, oracle: &mut dyn NodeOracle) {
        oracle.evaluate(&[root]);
        self.sync(oracle, &[root]);
        self.record(oracle, sweep, round, root, None, "root");
        let mut level = vec![(root, self.anchor_of(oracle, root, Anchor::Open))];
        while !level.is_empty() {
            let mut batch: Vec<CoreDims> = level
                .iter()
                .flat_map(|(d, _)| self.children(*d, sweep))
                .collect();
            batch.sort();
            batch.dedup();
            oracle.evaluate(&batch);
            self.sync(oracle, &batch);

            let mut next: Vec<(CoreDims, Anchor)> = Vec::new();
            for (d, anchor) in level {
                if !self.expanded.insert((d, sweep)) {
                    continue;
                }
                if let Some(NodeState::Pruned) = self.states.get(&d) {
                    let s = oracle.state(d);
                    self.states.insert(d, s);
                }
                let kids = self.children(d, sweep);
                if kids.is_empty() {
                    self.record(oracle, sweep, round, d, None, "leaf");
                    continue;
                }
                let parent_metric = match anchor {
                    Anchor::Open => {
                        for k in kids {
                            self.record(oracle, sweep, round, k, Some(d), "explore");
                            next.push((k, self.anchor_of(oracle, k, Anchor::Open)));
                        }
                        continue;
                    }
                    Anchor::Metric(m) => m,
                };
                let (feasible, infeasible): (Vec<CoreDims>, Vec<CoreDims>) = kids
                    .into_iter()
                    .partition(|k| matches!(oracle.state(*k), NodeState::Evaluated(_)));
                for k in infeasible {
                    self.record(oracle, sweep, round, k, Some(d), "infeasible");
                    next.push((k, anchor));
                }
                let metrics: Vec<Option<f64>> = feasible
                    .iter()
                    .map(|k| match oracle.state(*k) {
                        NodeState::Evaluated(m) => m,
                        _ => None,
                    })
                    .collect();
                match prune_step(parent_metric, &metrics) {
                    StepDecision::Explore(keep) => {
                        for (i, &k) in feasible.iter().enumerate() {
                            if keep.contains(&i) {
                                self.record(oracle, sweep, round, k, Some(d), "explore");
                                next.push((k, Anchor::Metric(metrics[i])));
                            } else {
                                self.record(oracle, sweep, round, k, Some(d), "prune");
                                self.mark_pruned(k);
                            }
                        }
                    }
                    StepDecision::Hysteresis => {
                        for &k in &feasible {
                            self.record(oracle, sweep, round, k, Some(d), "worse");
                        }
                        let resumed = self.band(oracle, sweep, round, d, &feasible, parent_metric);
                        if resumed.is_empty() {
                            for &k in &feasible {
                                self.mark_pruned(k);
                            }
                        }
                        next.extend(resumed);
                    }
                }
            }
            level = next;
        }
    }

    /// Looks up to `hysteresis_levels` below `kids` for a node beating the
    /// original parent; returns the nodes to resume from.
    fn band(
        &mut self,
        oracle: &mut dyn NodeOracle,
        sweep: Sweep,
        round: u32,
        parent: CoreDims,
        kids: &[CoreDims],
        parent_metric: Option<f64>,
    ) -> Vec<(CoreDims, Anchor)> {
        let mut frontier: Vec<CoreDims> = kids.to_vec();
        for _ in 0..self.hysteresis_levels {
            let mut deeper: Vec<CoreDims> = frontier
                .iter()
                .flat_map(|d| self.children(*d, sweep))
                .collect();
            deeper.sort();
            deeper.dedup();
            if deeper.is_empty() {
                break;
            }
            oracle.evaluate(&deeper);
            self.sync(oracle, &deeper);
            let improving: Vec<CoreDims> = deeper
                .iter()
                .copied()
                .filter(|d| match oracle.state(*d) {
                    NodeState::Evaluated(m) => better(m, parent_metric),
                    _ => false,
                })
                .collect();
            if !improving.is_empty() {
                return improving
                    .into_iter()
                    .map(|d| {
                        self.record(oracle, sweep, round, d, Some(parent), "band-resume");
                        (d, self.anchor_of(oracle, d, Anchor::Metric(parent_metric)))
                    })
                    .collect();
            }
            for &d in &deeper {
                self.record(oracle, sweep, round, d, Some(parent), "band-worse");
            }
            frontier = deeper;
        }
        for &d in &frontier {
            self.mark_pruned(d);
        }
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_better_child_prunes_the_other() {
        assert_eq!(
            prune_step(Some(10.0), &[Some(12.0), Some(8.0)]),
            StepDecision::Explore(vec![0])
        );
    }

    #[test]
    fn both_better_explores_both() {
        assert_eq!(
            prune_step(Some(10.0), &[Some(12.0), Some(11.0)]),
            StepDecision::Explore(vec![0, 1])
        );
    }

    #[test]
    fn all_worse_triggers_hysteresis() {
        assert_eq!(
            prune_step(Some(10.0), &[Some(7.0), Some(6.0)]),
            StepDecision::Hysteresis
        );
        assert_eq!(
            prune_step(Some(10.0), &[Some(10.0)]),
            StepDecision::Hysteresis
        );
        assert_eq!(prune_step(Some(10.0), &[]), StepDecision::Explore(vec![]));
    }

    #[test]
    fn filtered_children_are_worst() {
        assert_eq!(
            prune_step(None, &[Some(1.0), None]),
            StepDecision::Explore(vec![0])
        );
        assert_eq!(prune_step(Some(1.0), &[None]), StepDecision::Hysteresis);
    }

    /// Oracle over a fixed metric table; anything missing is infeasible.
    struct Table {
        metric: BTreeMap<CoreDims, Option<f64>>,
        calls: Vec<CoreDims>,
    }

    impl NodeOracle for Table {
        fn evaluate(&mut self, dims: &[CoreDims]) {
            for d in dims {
                if !self.calls.contains(d) {
                    self.calls.push(*d);
                }
            }
        }
        fn state(&self, d: CoreDims) -> NodeState {
            match self.metric.get(&d) {
                Some(m) => NodeState::Evaluated(*m),
                None => NodeState::Infeasible,
            }
        }
        fn best_counts(&self, _: CoreDims) -> Option<(u32, u32)> {
            Some((1, 1))
        }
    }

    fn chain(values: &[f64]) -> Table {
        // vc chain 64, 32, 16, 8
        let metric = values
            .iter()
            .enumerate()
            .map(|(i, v)| (CoreDims::new(8, 8, 64 >> i), Some(*v)))
            .collect();
        Table {
            metric,
            calls: Vec::new(),
        }
    }

    #[test]
    fn hysteresis_prunes_when_band_is_worse() {
        let mut t = chain(&[10.0, 7.0, 6.0, 50.0]);
        let mut tree = DimTree::new(8, 1);
        tree.walk(CoreDims::new(8, 8, 64), Sweep::Vc, 0, &mut t);
        // 64 (root), 32 (worse), 16 (band, worse) -> stop before 8
        assert_eq!(t.calls.len(), 3);
        assert!(!t.calls.contains(&CoreDims::new(8, 8, 8)));
    }

    #[test]
    fn hysteresis_resumes_from_improving_grandchild() {
        let mut t = chain(&[10.0, 7.0, 11.0, 12.0]);
        let mut tree = DimTree::new(8, 1);
        tree.walk(CoreDims::new(8, 8, 64), Sweep::Vc, 0, &mut t);
        assert_eq!(t.calls.len(), 4);
        assert!(tree
            .trace()
            .iter()
            .any(|r| r.decision == "band-resume" && r.dims.vc_width == 16));
    }

    #[test]
    fn infeasible_nodes_are_transparent() {
        let mut t = chain(&[10.0, 7.0, 6.0, 50.0]);
        t.metric.remove(&CoreDims::new(8, 8, 64));
        t.metric.remove(&CoreDims::new(8, 8, 32));
        let mut tree = DimTree::new(8, 0);
        tree.walk(CoreDims::new(8, 8, 64), Sweep::Vc, 0, &mut t);
        assert_eq!(t.calls.len(), 4);
    }

    #[test]
    fn tc_children_halve_one_axis() {
        let tree = DimTree::new(8, 1);
        assert_eq!(
            tree.children(CoreDims::new(16, 8, 8), Sweep::Tc),
            vec![CoreDims::new(8, 8, 8)]
        );
        assert_eq!(tree.children(CoreDims::new(16, 16, 8), Sweep::Tc).len(), 2);
    }
}
