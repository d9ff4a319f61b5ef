//! Smatch and fine-grained AMR evaluation.

mod exhaustive;
mod fine_grained;
mod smatch;

use thiserror::Error;

use crate::amr::{graph_to_triples, AmrGraph};

pub use exhaustive::{smatch_exhaustive, smatch_exhaustive_triples, EXHAUSTIVE_MAX_MAPPINGS, EXHAUSTIVE_MAX_VARS};
pub use fine_grained::{fine_grained, FINE_GRAINED_METRICS};
pub use smatch::{smatch, smatch_triples};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("exhaustive matching infeasible for {test_vars} x {gold_vars} variables")]
    TooLarge { test_vars: usize, gold_vars: usize },
    #[error("test corpus has {test} graphs but gold has {gold}")]
    AlignmentMismatch { test: usize, gold: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmatchOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Count the `TOP` triple on both sides.
    pub include_top: bool,
}

impl Default for SmatchOptions {
    fn default() -> Self {
        SmatchOptions { restarts: 4, seed: 0, include_top: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmatchResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub test_total: usize,
    pub gold_total: usize,
    /// Test variable to gold variable; unmapped variables are absent.
    pub mapping: Vec<(String, String)>,
}

impl SmatchResult {
    /// Scores from raw counts. Two empty sides agree perfectly.
    pub fn from_counts(matched: usize, test_total: usize, gold_total: usize) -> Self {
        let ratio = |den: usize, other: usize| {
            if den > 0 {
                matched as f64 / den as f64
            } else if other == 0 {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(test_total, gold_total);
        let recall = ratio(gold_total, test_total);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        SmatchResult { precision, recall, f1, matched, test_total, gold_total, mapping: Vec::new() }
    }

    pub fn with_mapping(mut self, mapping: Vec<(String, String)>) -> Self {
        self.mapping = mapping;
        self
    }

    /// Micro-average: sums the triple counts.
    pub fn sum<'a>(results: impl IntoIterator<Item = &'a SmatchResult>) -> SmatchResult {
        let (m, t, g) =
            results.into_iter().fold((0, 0, 0), |(m, t, g), r| (m + r.matched, t + r.test_total, g + r.gold_total));
        SmatchResult::from_counts(m, t, g)
    }
}

/// Corpus-level Smatch, micro-averaged over line-aligned graphs.
pub fn smatch_corpus(test: &[AmrGraph], gold: &[AmrGraph], opts: &SmatchOptions) -> Result<SmatchResult, MetricsError> {
    if test.len() != gold.len() {
        return Err(MetricsError::AlignmentMismatch { test: test.len(), gold: gold.len() });
    }
    let per: Vec<SmatchResult> =
        test.iter().zip(gold).map(|(t, g)| smatch_triples(&graph_to_triples(t), &graph_to_triples(g), opts)).collect();
    Ok(SmatchResult::sum(&per))
}
