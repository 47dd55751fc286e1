//! Training metrics used to rank designs.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Throughput,
    PerfPerTdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub objective: Objective,
    /// Samples/s floor; designs below it are discarded under `PerfPerTdp`.
    pub min_throughput: Option<f64>,
    /// Per-workload weights for common searches. Empty means equal weights.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl MetricSpec {
    pub fn throughput() -> Self {
        Self {
            objective: Objective::Throughput,
            min_throughput: None,
            weights: BTreeMap::new(),
        }
    }

    pub fn perf_per_tdp(min_throughput: f64) -> Self {
        Self {
            objective: Objective::PerfPerTdp,
            min_throughput: Some(min_throughput),
            weights: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.objective == Objective::PerfPerTdp && self.min_throughput.is_none() {
            return Err("perf-per-tdp needs a minimum throughput".into());
        }
        if !self.weights.is_empty() {
            let sum: f64 = self.weights.values().sum();
            if self.weights.values().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(format!(
                    "workload weights must be non-negative and sum to 1 (got {sum})"
                ));
            }
        }
        Ok(())
    }

    /// Metric value, or `None` when the design fails the throughput floor.
    pub fn value(&self, throughput: f64, tdp_watts: f64) -> Option<f64> {
        match self.objective {
            Objective::Throughput => Some(throughput),
            Objective::PerfPerTdp => {
                let floor = self.min_throughput.unwrap_or(0.0);
                (throughput >= floor).then(|| throughput / tdp_watts)
            }
        }
    }

    /// Weight of a workload; equal split when no weights are configured.
    pub fn weight(&self, workload: &str, count: usize) -> f64 {
        if self.weights.is_empty() {
            1.0 / count as f64
        } else {
            self.weights.get(workload).copied().unwrap_or(0.0)
        }
    }
}

/// Samples per second for one graph execution of `makespan_cycles`.
pub fn throughput(samples_per_iteration: u64, clock_hz: f64, makespan_cycles: u64) -> f64 {
    if makespan_cycles == 0 {
        return f64::INFINITY;
    }
    samples_per_iteration as f64 * clock_hz / makespan_cycles as f64
}

/// Total order on optional metric values: `None` ranks below everything.
pub fn cmp_metric(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}

/// Strictly better (higher) metric.
pub fn better(a: Option<f64>, b: Option<f64>) -> bool {
    cmp_metric(a, b) == Ordering::Greater
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_filters_perf_per_tdp() {
        let m = MetricSpec::perf_per_tdp(100.0);
        assert_eq!(m.value(50.0, 10.0), None);
        assert_eq!(m.value(200.0, 10.0), Some(20.0));
        assert_eq!(MetricSpec::throughput().value(50.0, 10.0), Some(50.0));
    }

    #[test]
    fn none_is_worst() {
        assert!(better(Some(-1e300), None));
        assert!(!better(None, None));
        assert!(!better(Some(1.0), Some(1.0)));
    }

    #[test]
    fn weights_validate() {
        let mut m = MetricSpec::throughput();
        assert!(m.validate().is_ok());
        assert_eq!(m.weight("a", 4), 0.25);
        m.weights.insert("a".into(), 0.3);
        m.weights.insert("b".into(), 0.3);
        assert!(m.validate().is_err());
        m.weights.insert("b".into(), 0.7);
        assert!(m.validate().is_ok());
        let mut p = MetricSpec::perf_per_tdp(1.0);
        p.min_throughput = None;
        assert!(p.validate().is_err());
    }
}
