//! Per-replication and aggregate evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::data::ModelIndexSet;
use crate::inference::Method;
use crate::interval::CoordinateInterval;

/// Interval metrics for one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    /// `sum (UL - LL) / |M|`.
    pub avg_length: f64,
    /// Fraction of intervals missing the truth.
    pub fcr: f64,
    /// Fraction of true-nonzero coordinates whose interval excludes zero;
    /// `None` when no selected coordinate is truly nonzero.
    pub power: Option<f64>,
}

/// `truth` is indexed by adjuster column, on the same scale as the intervals.
pub fn compute_metrics(intervals: &[CoordinateInterval], truth: &[f64]) -> IntervalMetrics {
    if intervals.is_empty() {
        return IntervalMetrics {
            avg_length: 0.0,
            fcr: 0.0,
            power: None,
        };
    }
    let m = intervals.len() as f64;
    let avg_length = intervals.iter().map(CoordinateInterval::length).sum::<f64>() / m;
    let misses = intervals.iter().filter(|iv| !iv.covers(truth[iv.coordinate])).count();
    let nonzero: Vec<&CoordinateInterval> = intervals.iter().filter(|iv| truth[iv.coordinate] != 0.0).collect();
    let power = (!nonzero.is_empty())
        .then(|| nonzero.iter().filter(|iv| iv.excludes_zero()).count() as f64 / nonzero.len() as f64);
    IntervalMetrics {
        avg_length,
        fcr: misses as f64 / m,
        power,
    }
}

/// Selection errors over the effect modifiers (the intercept is always kept).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub false_negatives: usize,
    pub false_positives: usize,
}

impl SelectionCounts {
    pub fn new(selected: &ModelIndexSet, truth: &[f64]) -> Self {
        let false_negatives = (1..truth.len())
            .filter(|&m| truth[m] != 0.0 && !selected.contains(m))
            .count();
        let false_positives = selected.indices().iter().filter(|&&m| m > 0 && truth[m] == 0.0).count();
        SelectionCounts {
            false_negatives,
            false_positives,
        }
    }

    pub fn exact(&self) -> bool {
        self.false_negatives == 0 && self.false_positives == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Intervals on the original scale; empty when the method failed.
    pub intervals: Vec<CoordinateInterval>,
    pub metrics: Option<IntervalMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub lambda_star: f64,
    pub selected: Vec<usize>,
    pub selection: SelectionCounts,
    pub outcomes: Vec<MethodOutcome>,
}

impl ReplicationRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub avg_ci_length: f64,
    pub fcr: f64,
    /// Mean over replications with at least one selected true-nonzero coordinate.
    pub power: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    /// Percent of replications missing at least one true modifier.
    pub fn_pct: f64,
    /// Percent of replications selecting at least one null modifier.
    pub fp_pct: f64,
    pub exact_pct: f64,
    /// Average number of false positives.
    pub afp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub methods: Vec<MethodSummary>,
    pub selection: SelectionSummary,
    /// Replications whose fit failed before any method ran.
    pub failed_reps: usize,
    pub reps: usize,
}

impl AggregateMetrics {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn aggregate(records: &[ReplicationRecord], methods: &[Method], failed_reps: usize) -> AggregateMetrics {
    let summaries = methods
        .iter()
        .map(|&method| {
            let ok: Vec<&IntervalMetrics> = records
                .iter()
                .filter_map(|r| r.outcome(method).and_then(|o| o.metrics.as_ref()))
                .collect();
            let lens: Vec<f64> = ok.iter().map(|m| m.avg_length).collect();
            let fcr: Vec<f64> = ok.iter().map(|m| m.fcr).collect();
            let power: Vec<f64> = ok.iter().filter_map(|m| m.power).collect();
            MethodSummary {
                method,
                avg_ci_length: mean(&lens),
                fcr: mean(&fcr),
                power: mean(&power),
                successes: ok.len(),
                failures: records.len() - ok.len(),
            }
        })
        .collect();
    let n = records.len().max(1) as f64;
    let pct = |f: &dyn Fn(&SelectionCounts) -> bool| {
        100.0 * records.iter().filter(|r| f(&r.selection)).count() as f64 / n
    };
    let selection = SelectionSummary {
        fn_pct: pct(&|s| s.false_negatives > 0),
        fp_pct: pct(&|s| s.false_positives > 0),
        exact_pct: pct(&|s| s.exact()),
        afp: records.iter().map(|r| r.selection.false_positives as f64).sum::<f64>() / n,
    };
    AggregateMetrics {
        methods: summaries,
        selection,
        failed_reps,
        reps: records.len() + failed_reps,
    }
}
