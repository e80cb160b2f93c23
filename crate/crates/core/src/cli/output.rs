//! Trace CSV, reference JSON and sweep summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::metrics::{ReferenceSolution, Trace};
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "iter,epoch,oracle_calls,sketched_calls,comm_rounds,bregman_gap,consensus_residual,objective";

pub const REFERENCE_FORMAT_VERSION: u32 = 1;

/// Writes one row per recorded iteration. Floats use the shortest
/// representation that round-trips, so equal runs give equal bytes.
pub fn write_trace_csv<T: Scalar, W: Write>(trace: &Trace<T>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &trace.rows {
        let epoch = r.epoch.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iter, epoch, r.oracle_calls, r.sketched_calls, r.comm_rounds, r.bregman_gap, r.consensus_residual, r.objective
        )?;
    }
    out.flush()
}

pub fn trace_csv_string<T: Scalar>(trace: &Trace<T>) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

/// On-disk reference: always stored in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub solution: ReferenceSolution<f64>,
}

impl ReferenceFile {
    pub fn new(solution: ReferenceSolution<f64>) -> Self {
        ReferenceFile {
            format_version: REFERENCE_FORMAT_VERSION,
            solution,
        }
    }
}

/// Converts a reference between scalar types.
pub fn cast_reference<S: Scalar, T: Scalar>(r: &ReferenceSolution<S>) -> ReferenceSolution<T> {
    let v = |xs: &[S]| xs.iter().map(|x| T::of(x.to_f64_lossy())).collect::<Vec<T>>();
    ReferenceSolution {
        x_star: v(&r.x_star),
        lambda_star: r.lambda_star.iter().map(|node| node.iter().map(|l| v(l)).collect()).collect(),
        v_star: r.v_star.iter().map(|s| v(s)).collect(),
        kkt_residual: T::of(r.kkt_residual.to_f64_lossy()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    /// Oracle calls per node.
    pub budget_per_node: u64,
    /// Gap of the last row within the budget, one per seed in seed order.
    pub gaps: Vec<Option<f64>>,
    /// Median over the seeds that reached the budget.
    pub median_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub algorithm: String,
    pub nodes: usize,
    pub seeds: Vec<u64>,
    pub traces: Vec<String>,
    pub final_gaps: Vec<f64>,
    pub median_final_gap: f64,
    pub budgets: Vec<BudgetSummary>,
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn summarize<T: Scalar>(
    algorithm: &str,
    nodes: usize,
    seeds: &[u64],
    names: Vec<String>,
    traces: &[Trace<T>],
    budgets: &[u64],
) -> SweepSummary {
    let final_gaps: Vec<f64> = traces
        .iter()
        .map(|t| t.last().map_or(f64::NAN, |r| r.bregman_gap.to_f64_lossy()))
        .collect();
    let budgets = budgets
        .iter()
        .map(|&b| {
            let gaps: Vec<Option<f64>> = traces
                .iter()
                .map(|t| t.gap_at_budget(b * nodes as u64).map(|g| g.to_f64_lossy()))
                .collect();
            let present: Vec<f64> = gaps.iter().flatten().copied().collect();
            BudgetSummary {
                budget_per_node: b,
                median_gap: median(&present),
                gaps,
            }
        })
        .collect();
    SweepSummary {
        algorithm: algorithm.to_string(),
        nodes,
        seeds: seeds.to_vec(),
        traces: names,
        median_final_gap: median(&final_gaps).unwrap_or(f64::NAN),
        final_gaps,
        budgets,
    }
}
