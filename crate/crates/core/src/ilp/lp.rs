//! CPLEX LP-format dump of an instance for cross-checking with external
//! MILP solvers. Only the time objective is written; the area/power
//! objective is a second solve with the makespan fixed.

use std::fmt::Write;

use super::IlpInstance;

fn y(v: usize, t: u64) -> String {
    format!("y_{v}_{t}")
}

pub fn write_lp(inst: &IlpInstance) -> String {
    let t = &inst.tasks;
    let n = t.len();
    let horizon = inst.horizon;
    let dur = |v: usize| t.latency(v);
    let window = |v: usize| 0..=(horizon - dur(v));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ ops: {n}, horizon: {horizon} slots of {} cycles",
        inst.slot_cycles
    );
    for v in 0..n {
        let _ = writeln!(out, "\\ {v} = {}", t.id(v));
    }

    out.push_str("Minimize\n obj:");
    for s in 0..=horizon {
        let _ = write!(out, " + {s} s_{s}");
    }
    out.push_str("\nSubject To\n");

    for v in 0..n {
        let terms: Vec<String> = window(v).map(|s| y(v, s)).collect();
        let _ = writeln!(out, " start_{v}: {} = 1", terms.join(" + "));
    }
    let sink: Vec<String> = (0..=horizon).map(|s| format!("s_{s}")).collect();
    let _ = writeln!(out, " start_sink: {} = 1", sink.join(" + "));

    for (name, var, uses) in [("tc", "x_tc", 0usize), ("vc", "x_vc", 1usize)] {
        let users: Vec<usize> = (0..n)
            .filter(|&v| {
                if uses == 0 {
                    t.affinity(v).uses_tensor()
                } else {
                    t.affinity(v).uses_vector()
                }
            })
            .collect();
        if users.is_empty() {
            continue;
        }
        for slot in 0..horizon {
            let mut terms = Vec::new();
            for &v in &users {
                let lo = slot.saturating_sub(dur(v) - 1);
                for s in lo..=slot.min(horizon - dur(v)) {
                    terms.push(y(v, s));
                }
            }
            if !terms.is_empty() {
                let _ = writeln!(
                    out,
                    " cap_{name}_{slot}: {} - {var} <= 0",
                    terms.join(" + ")
                );
            }
        }
    }

    let mut edges: Vec<(usize, usize)> = t.edges().to_vec();
    // every op precedes the sink
    let sink_edges = (0..n).map(|v| (v, usize::MAX));
    for (i, (a, b)) in edges.drain(..).chain(sink_edges).enumerate() {
        let mut terms = Vec::new();
        if b == usize::MAX {
            terms.extend((1..=horizon).map(|s| format!("+ {s} s_{s}")));
        } else {
            terms.extend(
                window(b)
                    .filter(|&s| s > 0)
                    .map(|s| format!("+ {s} {}", y(b, s))),
            );
        }
        terms.extend(
            window(a)
                .filter(|&s| s > 0)
                .map(|s| format!("- {s} {}", y(a, s))),
        );
        let _ = writeln!(out, " prec_{i}: {} >= {}", terms.join(" "), dur(a));
    }

    let u = &inst.unit;
    let _ = writeln!(
        out,
        " area: {} x_tc + {} x_vc <= {}",
        u.tc_area_mm2,
        u.vc_area_mm2,
        inst.area_budget - u.fixed_area_mm2
    );
    let _ = writeln!(
        out,
        " power: {} x_tc + {} x_vc <= {}",
        u.tc_power_w,
        u.vc_power_w,
        inst.power_budget - u.fixed_power_w
    );

    out.push_str("Bounds\n");
    let lo_t = u32::from(t.uses_tensor());
    let lo_v = u32::from(t.uses_vector());
    let _ = writeln!(
        out,
        " {lo_t} <= x_tc <= {}",
        if lo_t == 0 { 0 } else { inst.bound.tensor }
    );
    let _ = writeln!(
        out,
        " {lo_v} <= x_vc <= {}",
        if lo_v == 0 { 0 } else { inst.bound.vector }
    );
    out.push_str("Generals\n x_tc x_vc\nBinaries\n");
    for v in 0..n {
        for s in window(v) {
            let _ = writeln!(out, " {}", y(v, s));
        }
    }
    for s in 0..=horizon {
        let _ = writeln!(out, " s_{s}");
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{CoreDims, SystemConfig};
    use crate::graph::Affinity;
    use crate::ilp::build_instance;
    use crate::sched::TaskGraph;

    #[test]
    fn chain_dump_lists_every_variable() {
        let t = TaskGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1, 1, 1],
            vec![Affinity::Tensor; 3],
            &[(0, 1), (1, 2)],
        )
        .unwrap();
        let inst = build_instance(
            &t,
            CoreDims::new(8, 8, 8),
            &SystemConfig::default(),
            Some(3),
        )
        .unwrap();
        let lp = write_lp(&inst);
        let binaries = lp.split("Binaries\n").nth(1).unwrap();
        let y_vars = binaries
            .lines()
            .filter(|l| l.trim_start().starts_with("y_"))
            .count() as u64;
        assert_eq!(y_vars, inst.num_y_vars());
        assert!(lp.contains(" start_0: y_0_0 + y_0_1 + y_0_2 = 1"));
        assert!(lp.contains("cap_tc_0:"));
        assert!(!lp.contains("cap_vc_"));
        assert!(lp.ends_with("End\n"));
    }
}
