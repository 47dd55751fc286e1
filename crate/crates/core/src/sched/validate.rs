//! Schedule checker, written independently of the schedulers it audits.

use std::collections::BTreeMap;
use std::fmt;

use crate::graph::{Affinity, OperatorGraph};

use super::{CoreType, Schedule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Shape(String),
    Precedence {
        from: String,
        to: String,
        finish: u64,
        start: u64,
    },
    WrongCore {
        op: String,
    },
    CoreIndex {
        op: String,
        core: CoreType,
        index: u32,
        available: u32,
    },
    Overlap {
        core: CoreType,
        index: u32,
        first: String,
        second: String,
    },
    Capacity {
        core: CoreType,
        time: u64,
        busy: u32,
        available: u32,
    },
    Makespan {
        claimed: u64,
        actual: u64,
    },
    MissingOp(String),
    UnknownOp(String),
    AffinityMismatch {
        op: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(s) => write!(f, "malformed schedule: {s}"),
            Violation::Precedence {
                from,
                to,
                finish,
                start,
            } => {
                write!(f, "edge {from} -> {to}: {to} starts at {start} before {from} finishes at {finish}")
            }
            Violation::WrongCore { op } => {
                write!(f, "{op}: core assignment does not match its affinity")
            }
            Violation::CoreIndex {
                op,
                core,
                index,
                available,
            } => {
                write!(f, "{op}: {core} core #{index} but only {available} exist")
            }
            Violation::Overlap {
                core,
                index,
                first,
                second,
            } => {
                write!(f, "{core} core #{index}: {first} and {second} overlap")
            }
            Violation::Capacity {
                core,
                time,
                busy,
                available,
            } => {
                write!(
                    f,
                    "cycle {time}: {busy} {core} ops running on {available} cores"
                )
            }
            Violation::Makespan { claimed, actual } => {
                write!(f, "makespan claimed {claimed}, actual {actual}")
            }
            Violation::MissingOp(id) => write!(f, "{id}: in graph but not scheduled"),
            Violation::UnknownOp(id) => write!(f, "{id}: scheduled but not in graph"),
            Violation::AffinityMismatch { op } => write!(f, "{op}: affinity differs from graph"),
        }
    }
}

/// Checks precedence, per-core exclusivity, capacity and makespan.
/// `edges` index into the schedule's op list.
pub fn validate_schedule(s: &Schedule, edges: &[(usize, usize)]) -> Vec<Violation> {
    let n = s.ids.len();
    if s.latency.len() != n || s.start.len() != n || s.slots.len() != n || s.affinity.len() != n {
        return vec![Violation::Shape("per-op vectors differ in length".into())];
    }
    let mut out = Vec::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            out.push(Violation::Shape(format!("edge ({a}, {b}) out of range")));
            continue;
        }
        let finish = s.start[a] + s.latency[a];
        if s.start[b] < finish {
            out.push(Violation::Precedence {
                from: s.ids[a].clone(),
                to: s.ids[b].clone(),
                finish,
                start: s.start[b],
            });
        }
    }

    let mut per_core: BTreeMap<(CoreType, u32), Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let slot = s.slots[v];
        let (need_t, need_v) = match s.affinity[v] {
            Affinity::Tensor => (true, false),
            Affinity::Vector => (false, true),
            Affinity::Both => (true, true),
        };
        if slot.tensor.is_some() != need_t || slot.vector.is_some() != need_v {
            out.push(Violation::WrongCore {
                op: s.ids[v].clone(),
            });
        }
        for (core, idx, avail) in [
            (CoreType::Tensor, slot.tensor, s.counts.tensor),
            (CoreType::Vector, slot.vector, s.counts.vector),
        ] {
            if let Some(i) = idx {
                if i >= avail {
                    out.push(Violation::CoreIndex {
                        op: s.ids[v].clone(),
                        core,
                        index: i,
                        available: avail,
                    });
                }
                per_core.entry((core, i)).or_default().push(v);
            }
        }
    }
    for ((core, index), mut ops) in per_core {
        ops.retain(|&v| s.latency[v] > 0);
        ops.sort_by_key(|&v| (s.start[v], v));
        for w in ops.windows(2) {
            if s.start[w[1]] < s.start[w[0]] + s.latency[w[0]] {
                out.push(Violation::Overlap {
                    core,
                    index,
                    first: s.ids[w[0]].clone(),
                    second: s.ids[w[1]].clone(),
                });
            }
        }
    }

    for core in [CoreType::Tensor, CoreType::Vector] {
        let avail = match core {
            CoreType::Tensor => s.counts.tensor,
            CoreType::Vector => s.counts.vector,
        };
        let uses = |a: Affinity| match core {
            CoreType::Tensor => a.uses_tensor(),
            CoreType::Vector => a.uses_vector(),
        };
        let mut events: Vec<(u64, i64)> = Vec::new();
        for v in (0..n).filter(|&v| uses(s.affinity[v]) && s.latency[v] > 0) {
            events.push((s.start[v], 1));
            events.push((s.start[v] + s.latency[v], -1));
        }
        events.sort_unstable();
        let mut busy = 0i64;
        for (time, d) in events {
            busy += d;
            if busy > i64::from(avail) {
                out.push(Violation::Capacity {
                    core,
                    time,
                    busy: busy as u32,
                    available: avail,
                });
                break;
            }
        }
    }

    let actual = (0..n).map(|v| s.start[v] + s.latency[v]).max().unwrap_or(0);
    if actual != s.makespan {
        out.push(Violation::Makespan {
            claimed: s.makespan,
            actual,
        });
    }
    out
}

/// Validates a schedule against a graph matched by op id.
pub fn validate_against_graph(s: &Schedule, g: &OperatorGraph) -> Vec<Violation> {
    let pos: BTreeMap<&str, usize> = s
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut out = Vec::new();
    for op in g.ops() {
        match pos.get(op.id.as_str()) {
            None => out.push(Violation::MissingOp(op.id.clone())),
            Some(&i) if s.affinity[i] != op.affinity => {
                out.push(Violation::AffinityMismatch { op: op.id.clone() })
            }
            _ => {}
        }
    }
    for id in &s.ids {
        if g.get(id).is_none() {
            out.push(Violation::UnknownOp(id.clone()));
        }
    }
    let edges: Vec<(usize, usize)> = g
        .edge_ids()
        .iter()
        .filter_map(|(a, b)| Some((*pos.get(a.as_str())?, *pos.get(b.as_str())?)))
        .collect();
    out.extend(validate_schedule(s, &edges));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::{CoreCounts, CoreSlot};

    fn two_op(start_b: u64) -> Schedule {
        Schedule {
            ids: vec!["a".into(), "b".into()],
            latency: vec![3, 2],
            affinity: vec![Affinity::Tensor, Affinity::Tensor],
            start: vec![0, start_b],
            slots: vec![
                CoreSlot {
                    tensor: Some(0),
                    vector: None
                };
                2
            ],
            ready: vec![0, 3],
            makespan: start_b + 2,
            counts: CoreCounts::new(1, 0),
        }
    }

    #[test]
    fn valid_chain() {
        assert!(validate_schedule(&two_op(3), &[(0, 1)]).is_empty());
    }

    #[test]
    fn early_start_is_flagged() {
        let v = validate_schedule(&two_op(2), &[(0, 1)]);
        assert!(v.iter().any(|x| matches!(x, Violation::Precedence { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::Overlap { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::Capacity { .. })));
    }

    #[test]
    fn bad_index_and_makespan() {
        let mut s = two_op(3);
        s.slots[1].tensor = Some(4);
        s.makespan = 99;
        let v = validate_schedule(&s, &[(0, 1)]);
        assert!(v.iter().any(|x| matches!(x, Violation::CoreIndex { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::Makespan { .. })));
    }

    #[test]
    fn empty_schedule_is_valid() {
        let s = Schedule {
            ids: vec![],
            latency: vec![],
            affinity: vec![],
            start: vec![],
            slots: vec![],
            ready: vec![],
            makespan: 0,
            counts: CoreCounts::default(),
        };
        assert!(validate_schedule(&s, &[]).is_empty());
    }
}
