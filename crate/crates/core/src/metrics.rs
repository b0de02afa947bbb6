//! Navigation metrics: NE, SR, OSR and SPL per episode, and their means.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::EpisodeTrace;
use crate::graph::{GraphError, NavGraph};

/// Success radius in meters.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("goal {goal:?} is unreachable from start {start:?}")]
    Unreachable { start: String, goal: String },
    #[error("trace has an empty path")]
    EmptyPath,
    #[error("cannot aggregate an empty result set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl_term: f64,
    pub shortest: f64,
    pub traveled: f64,
}

pub fn evaluate(trace: &EpisodeTrace, graph: &NavGraph, threshold: f64) -> Result<EvalResult, MetricsError> {
    let goal = &trace.spec.goal;
    let start = &trace.spec.start;
    if trace.path.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    let to_goal = graph.distances_from(goal)?;
    let shortest = to_goal.distance(start)?;
    if !shortest.is_finite() {
        return Err(MetricsError::Unreachable {
            start: start.clone(),
            goal: goal.clone(),
        });
    }
    let ne = to_goal.distance(&trace.final_node)?;
    let success = ne <= threshold;
    let mut oracle_success = false;
    for node in &trace.path {
        if to_goal.distance(node)? <= threshold {
            oracle_success = true;
        }
    }
    let mut traveled = 0.0;
    for w in trace.path.windows(2) {
        traveled += graph.edge_length(&w[0], &w[1])?;
    }
    let spl_term = if !success {
        0.0
    } else if shortest == 0.0 {
        1.0
    } else {
        shortest / shortest.max(traveled)
    };
    Ok(EvalResult {
        ne,
        success,
        oracle_success,
        spl_term,
        shortest,
        traveled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n: usize,
    pub mean_ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
}

pub fn aggregate(results: &[EvalResult]) -> Result<AggregateReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = results.len() as f64;
    let frac = |f: fn(&EvalResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(AggregateReport {
        n: results.len(),
        mean_ne: results.iter().map(|r| r.ne).sum::<f64>() / n,
        sr: frac(|r| r.success),
        osr: frac(|r| r.oracle_success),
        spl: results.iter().map(|r| r.spl_term).sum::<f64>() / n,
    })
}

impl AggregateReport {
    /// Aligned text table in NE / OSR / SR / SPL order; rates as percentages.
    pub fn to_table(&self, label: &str) -> String {
        let label_w = label.len().max(5);
        let mut out = format!(
            "{:<label_w$}  {:>5}  {:>8}  {:>7}  {:>7}  {:>7}\n",
            "split", "n", "NE", "OSR", "SR", "SPL"
        );
        out.push_str(&format!(
            "{:<label_w$}  {:>5}  {:>8.2}  {:>7.2}  {:>7.2}  {:>7.2}\n",
            label,
            self.n,
            self.mean_ne,
            self.osr * 100.0,
            self.sr * 100.0,
            self.spl * 100.0
        ));
        out
    }
}
