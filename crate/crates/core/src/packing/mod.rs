//! PP-level batch formation.
//!
//! Every strategy produces [`PackingPlan`]s: the micro-batches of one
//! training iteration plus whatever the strategy chose to hold back.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::workload::{microbatch_latency, CostProfile, Document, MicroBatch};

mod exact;
mod heuristic;
mod sequential;

pub use exact::{fixed_len_exact_pack, var_len_exact_pack, ExactPacking, EXACT_ORACLE_LIMIT};
pub use heuristic::{HeuristicPacker, OutlierQueueSet};
pub use sequential::{
    baseline_sequential_pack, fixed_len_greedy_pack, IdAllocator, SequentialLoader,
};

/// The packing decision for one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PackingPlan {
    pub iteration: u64,
    pub microbatches: Vec<MicroBatch>,
    /// Documents that did not fit and move to the next iteration.
    pub carried_over: Vec<Document>,
    /// Tokens still waiting in outlier queues after this iteration.
    pub queued_tokens: u64,
}

impl PackingPlan {
    pub fn packed_tokens(&self) -> u64 {
        self.microbatches.iter().map(MicroBatch::total_length).sum()
    }

    pub fn carried_tokens(&self) -> u64 {
        self.carried_over.iter().map(|d| d.length).sum()
    }

    /// Every packed document with its delay in iterations.
    pub fn doc_delays(&self) -> impl Iterator<Item = (&Document, u64)> + '_ {
        self.microbatches
            .iter()
            .flat_map(MicroBatch::docs)
            .map(move |d| (d, self.iteration.saturating_sub(d.arrival_batch)))
    }
}

/// `max / mean` of non-negative workloads; all-zero workloads are balanced.
pub fn max_over_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "imbalance needs at least one micro-batch",
        ));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Ok(1.0);
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(max * values.len() as f64 / total)
}

/// `Max_Attn / Avg_Attn` over the micro-batches of one global batch, using
/// causal pair counts.
pub fn imbalance_degree_attention(microbatches: &[MicroBatch]) -> Result<f64> {
    let w: Vec<f64> = microbatches
        .iter()
        .map(|mb| mb.attention_workload() as f64)
        .collect();
    max_over_mean(&w)
}

/// `Max_Latency * count / Total_Latency` with `count` the number of
/// micro-batches given (the PP size when applied to one DP replica).
pub fn imbalance_degree_latency(microbatches: &[MicroBatch], profile: &CostProfile) -> Result<f64> {
    let w: Vec<f64> = microbatches
        .iter()
        .map(|mb| microbatch_latency(mb, profile))
        .collect();
    max_over_mean(&w)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TokenDelayStats {
    /// Token-weighted mean delay in iterations.
    pub mean_delay: f64,
    pub max_delay: u64,
    /// Fraction of tokens trained later than the iteration they arrived in.
    pub delayed_fraction: f64,
    pub tokens: u64,
}

/// Delay of each packed token: iteration consumed minus iteration arrived.
pub fn token_delay_stats<'a, I>(plans: I) -> TokenDelayStats
where
    I: IntoIterator<Item = &'a PackingPlan>,
{
    let mut tokens = 0u64;
    let mut weighted = 0u128;
    let mut delayed = 0u64;
    let mut max_delay = 0u64;
    for plan in plans {
        for (doc, delay) in plan.doc_delays() {
            tokens += doc.length;
            weighted += u128::from(doc.length) * u128::from(delay);
            if delay > 0 {
                delayed += doc.length;
                max_delay = max_delay.max(delay);
            }
        }
    }
    if tokens == 0 {
        return TokenDelayStats::default();
    }
    TokenDelayStats {
        mean_delay: weighted as f64 / tokens as f64,
        max_delay,
        delayed_fraction: delayed as f64 / tokens as f64,
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn imbalance_arithmetic() {
        assert_eq!(max_over_mean(&[4.0, 2.0, 2.0]).unwrap(), 1.5);
        assert_eq!(max_over_mean(&[3.0, 1.0]).unwrap(), 1.5);
        assert_eq!(max_over_mean(&[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(max_over_mean(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(max_over_mean(&[]).is_err());
    }

    #[test]
    fn imbalance_of_identical_microbatches() {
        let p = CostProfile::default();
        let mbs: Vec<MicroBatch> = (0..4)
            .map(|i| MicroBatch::new(vec![Document::new(i, 100, 0)]))
            .collect();
        assert_eq!(imbalance_degree_attention(&mbs).unwrap(), 1.0);
        assert!((imbalance_degree_latency(&mbs, &p).unwrap() - 1.0).abs() < 1e-12);
        let empty = vec![MicroBatch::default(); 3];
        assert_eq!(imbalance_degree_attention(&empty).unwrap(), 1.0);
    }

    #[test]
    fn delay_of_one_held_outlier() {
        // N = 2; the outlier arrives in batch 0 and trains in batch 1.
        // It holds 10% of all tokens over the two iterations.
        let p0 = PackingPlan {
            iteration: 0,
            microbatches: vec![
                MicroBatch::new(vec![Document::new(0, 45, 0)]),
                MicroBatch::new(vec![Document::new(1, 45, 0)]),
            ],
            ..PackingPlan::default()
        };
        let p1 = PackingPlan {
            iteration: 1,
            microbatches: vec![
                MicroBatch::new(vec![Document::new(9, 20, 0), Document::new(2, 35, 1)]),
                MicroBatch::new(vec![Document::new(3, 55, 1)]),
            ],
            ..PackingPlan::default()
        };
        let s = token_delay_stats([&p0, &p1]);
        assert_eq!(s.tokens, 200);
        assert!((s.mean_delay - 0.1).abs() < 1e-12);
        assert_eq!(s.max_delay, 1);
        assert!((s.delayed_fraction - 0.1).abs() < 1e-12);
        assert_eq!(token_delay_stats([&p0]).mean_delay, 0.0);
    }
}
