//! Exact minimum-makespan search for fixed core counts.
//!
//! Left-justified schedules start every op at time zero or at some op's
//! completion, so the search only branches at completion events: at each
//! event it picks which subset of ready ops to start. States reached again
//! no earlier than before are cut, as are nodes whose lower bound (longest
//! remaining chain, remaining work per core type) cannot beat the incumbent.

use std::collections::HashMap;

use crate::sched::{CoreCounts, TaskGraph};

type Key = (Vec<u64>, Vec<(u32, u64)>);

pub(crate) struct Outcome {
    /// Best makespan strictly below the cutoff, with its start times.
    pub best: Option<(u64, Vec<u64>)>,
    pub timed_out: bool,
}

pub(crate) struct NodeCounter {
    pub used: u64,
    pub budget: u64,
}

impl NodeCounter {
    fn tick(&mut self) -> bool {
        self.used += 1;
        self.used <= self.budget
    }
}

/// Longest path from the start of each op to the end of the graph.
pub(crate) fn tails(tasks: &TaskGraph) -> Vec<u64> {
    let mut tail = vec![0u64; tasks.len()];
    for &v in tasks.topo().iter().rev() {
        let after = tasks.succs(v).iter().map(|&s| tail[s]).max().unwrap_or(0);
        tail[v] = tasks.latency(v) + after;
    }
    tail
}

struct Search<'a> {
    tasks: &'a TaskGraph,
    counts: CoreCounts,
    tail: &'a [u64],
    order: Vec<usize>,
    nodes: &'a mut NodeCounter,
    memo: HashMap<Key, u64>,
    cutoff: u64,
    best: Option<(u64, Vec<u64>)>,
    starts: Vec<u64>,
    started: Vec<bool>,
    timed_out: bool,
}

/// Smallest makespan below `cutoff` for the given counts, if one exists.
pub(crate) fn min_makespan(
    tasks: &TaskGraph,
    counts: CoreCounts,
    tail: &[u64],
    cutoff: u64,
    nodes: &mut NodeCounter,
) -> Outcome {
    let n = tasks.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        tail[b]
            .cmp(&tail[a])
            .then_with(|| tasks.id(a).cmp(tasks.id(b)))
    });
    let mut s = Search {
        tasks,
        counts,
        tail,
        order,
        nodes,
        memo: HashMap::new(),
        cutoff,
        best: None,
        starts: vec![0; n],
        started: vec![false; n],
        timed_out: false,
    };
    if n > 0 {
        s.event(0, Vec::new(), 0);
    }
    Outcome {
        best: s.best,
        timed_out: s.timed_out,
    }
}

impl Search<'_> {
    fn key(&self, t: u64, running: &[(u64, usize)]) -> Key {
        let mut words = vec![0u64; self.started.len().div_ceil(64)];
        for (i, &b) in self.started.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        let mut rel: Vec<(u32, u64)> = running.iter().map(|&(f, v)| (v as u32, f - t)).collect();
        rel.sort_unstable();
        (words, rel)
    }

    fn lower_bound(&self, t: u64, running: &[(u64, usize)]) -> u64 {
        let mut lb = t;
        let (mut work_t, mut work_v) = (0u64, 0u64);
        for &(f, v) in running {
            lb = lb.max(f - self.tasks.latency(v) + self.tail[v]);
            let a = self.tasks.affinity(v);
            if a.uses_tensor() {
                work_t += f - t;
            }
            if a.uses_vector() {
                work_v += f - t;
            }
        }
        for v in 0..self.tasks.len() {
            if self.started[v] {
                continue;
            }
            lb = lb.max(t + self.tail[v]);
            let a = self.tasks.affinity(v);
            if a.uses_tensor() {
                work_t += self.tasks.latency(v);
            }
            if a.uses_vector() {
                work_v += self.tasks.latency(v);
            }
        }
        if self.counts.tensor > 0 {
            lb = lb.max(t + work_t.div_ceil(u64::from(self.counts.tensor)));
        }
        if self.counts.vector > 0 {
            lb = lb.max(t + work_v.div_ceil(u64::from(self.counts.vector)));
        }
        lb
    }

    /// Decision point at time `t`; `running` holds ops finishing after `t`.
    fn event(&mut self, t: u64, running: Vec<(u64, usize)>, n_started: usize) {
        if self.timed_out {
            return;
        }
        if !self.nodes.tick() {
            self.timed_out = true;
            return;
        }
        if self.lower_bound(t, &running) >= self.cutoff {
            return;
        }
        let key = self.key(t, &running);
        match self.memo.get(&key) {
            Some(&seen) if seen <= t => return,
            _ => {
                self.memo.insert(key, t);
            }
        }

        let busy = |r: &[(u64, usize)], tensor: bool| {
            r.iter()
                .filter(|&&(_, v)| {
                    let a = self.tasks.affinity(v);
                    if tensor {
                        a.uses_tensor()
                    } else {
                        a.uses_vector()
                    }
                })
                .count() as u32
        };
        let free = CoreCounts::new(
            self.counts.tensor - busy(&running, true),
            self.counts.vector - busy(&running, false),
        );
        let ready: Vec<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&v| {
                !self.started[v]
                    && self
                        .tasks
                        .preds(v)
                        .iter()
                        .all(|&p| self.started[p] && !running.iter().any(|&(_, r)| r == p))
            })
            .collect();
        let mut chosen = Vec::new();
        self.choose(t, &running, n_started, &ready, 0, free, &mut chosen);
    }

    #[allow(clippy::too_many_arguments)]
    fn choose(
        &mut self,
        t: u64,
        running: &[(u64, usize)],
        n_started: usize,
        ready: &[usize],
        i: usize,
        free: CoreCounts,
        chosen: &mut Vec<usize>,
    ) {
        if self.timed_out {
            return;
        }
        if i == ready.len() {
            if chosen.is_empty() && running.is_empty() {
                return;
            }
            self.advance(t, running, n_started, chosen);
            return;
        }
        let v = ready[i];
        let a = self.tasks.affinity(v);
        let need = CoreCounts::new(u32::from(a.uses_tensor()), u32::from(a.uses_vector()));
        if need.dominated_by(&free) {
            chosen.push(v);
            let rest = CoreCounts::new(free.tensor - need.tensor, free.vector - need.vector);
            self.choose(t, running, n_started, ready, i + 1, rest, chosen);
            chosen.pop();
        }
        self.choose(t, running, n_started, ready, i + 1, free, chosen);
    }

    fn advance(&mut self, t: u64, running: &[(u64, usize)], n_started: usize, chosen: &[usize]) {
        let mut next: Vec<(u64, usize)> = running.to_vec();
        for &v in chosen {
            self.started[v] = true;
            self.starts[v] = t;
            next.push((t + self.tasks.latency(v), v));
        }
        let total = n_started + chosen.len();
        if total == self.tasks.len() {
            let makespan = next.iter().map(|&(f, _)| f).max().unwrap_or(t);
            if makespan < self.cutoff {
                self.cutoff = makespan;
                self.best = Some((makespan, self.starts.clone()));
            }
        } else {
            let t_next = next
                .iter()
                .map(|&(f, _)| f)
                .min()
                .expect("something is running");
            next.retain(|&(f, _)| f > t_next);
            self.event(t_next, next, total);
        }
        for &v in chosen {
            self.started[v] = false;
        }
    }
}
