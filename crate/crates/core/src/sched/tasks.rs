use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::graph::{Affinity, OperatorGraph};

use super::{CoreCounts, ScheduleError};

/// Scheduling view of a graph: per-op latency and core affinity over dense
/// indices. Shared by the list scheduler, the heuristic and the exact solver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    ids: Vec<String>,
    latency: Vec<u64>,
    affinity: Vec<Affinity>,
    edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl TaskGraph {
    pub fn new(
        ids: Vec<String>,
        latency: Vec<u64>,
        affinity: Vec<Affinity>,
        edges: &[(usize, usize)],
    ) -> Result<Self, ScheduleError> {
        assert_eq!(ids.len(), latency.len());
        assert_eq!(ids.len(), affinity.len());
        let n = ids.len();
        let mut edges: Vec<(usize, usize)> = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(s, d) in &edges {
            if s == d {
                return Err(ScheduleError::Cycle);
            }
            succs[s].push(d);
            preds[d].push(s);
        }
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<(&str, usize)>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(|i| Reverse((ids[i].as_str(), i)))
            .collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(Reverse((_, v))) = heap.pop() {
            topo.push(v);
            for &w in &succs[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    heap.push(Reverse((ids[w].as_str(), w)));
                }
            }
        }
        if topo.len() != n {
            return Err(ScheduleError::Cycle);
        }
        Ok(Self {
            ids,
            latency,
            affinity,
            edges,
            preds,
            succs,
            topo,
        })
    }

    pub fn from_graph(g: &OperatorGraph, latency: Vec<u64>) -> Self {
        let ids = g.ops().iter().map(|op| op.id.clone()).collect();
        let affinity = g.ops().iter().map(|op| op.affinity).collect();
        Self::new(ids, latency, affinity, g.edges()).expect("operator graphs are acyclic")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn latency(&self, v: usize) -> u64 {
        self.latency[v]
    }

    pub fn latencies(&self) -> &[u64] {
        &self.latency
    }

    pub fn affinity(&self, v: usize) -> Affinity {
        self.affinity[v]
    }

    pub fn affinities(&self) -> &[Affinity] {
        &self.affinity
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn serial_sum(&self) -> u64 {
        self.latency.iter().sum()
    }

    pub fn uses_tensor(&self) -> bool {
        self.affinity.iter().any(|a| a.uses_tensor())
    }

    pub fn uses_vector(&self) -> bool {
        self.affinity.iter().any(|a| a.uses_vector())
    }

    /// One core of every type some op needs, none of the others.
    pub fn minimum_counts(&self) -> CoreCounts {
        CoreCounts::new(u32::from(self.uses_tensor()), u32::from(self.uses_vector()))
    }

    pub fn ops_needing(&self) -> CoreCounts {
        let t = self.affinity.iter().filter(|a| a.uses_tensor()).count() as u32;
        let v = self.affinity.iter().filter(|a| a.uses_vector()).count() as u32;
        CoreCounts::new(t, v)
    }

    /// Same structure with different latencies (e.g. rounded to slots).
    pub fn with_latencies(&self, latency: Vec<u64>) -> Self {
        assert_eq!(latency.len(), self.len());
        Self {
            latency,
            ..self.clone()
        }
    }
}
