//! Seeded synthetic document streams.
//!
//! Lengths come from a mixture of a log-normal body (most documents are
//! short) and a bounded Pareto tail (a few are very long), then get clamped
//! to `[1, context_window]`. The tail's upper bound sits above the window
//! so a visible fraction of documents is truncated to exactly the window.

use packsim_core::Document;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Median of the log-normal body, in tokens.
    pub body_median: f64,
    /// Standard deviation of `ln(length)` in the body.
    pub body_sigma: f64,
    /// Probability that a document is drawn from the tail.
    pub tail_weight: f64,
    pub tail_min: f64,
    /// Pareto shape; smaller is heavier.
    pub tail_shape: f64,
    /// Tail upper bound as a multiple of the context window.
    pub tail_max_factor: f64,
    /// Length cap. `None` inside an experiment means the experiment window.
    pub context_window: Option<u64>,
    /// Generation stops once this many tokens have been produced.
    pub total_tokens: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            body_median: 4096.0,
            body_sigma: 0.7,
            tail_weight: 0.2,
            tail_min: 6144.0,
            tail_shape: 1.1,
            tail_max_factor: 2.0,
            context_window: None,
            total_tokens: 64 * 8 * 128 * 1024,
        }
    }
}

pub const DEFAULT_WINDOW: u64 = 128 * 1024;

impl SyntheticSpec {
    pub fn window(&self) -> u64 {
        self.context_window.unwrap_or(DEFAULT_WINDOW)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(format!("synthetic: {m}")));
        if !(self.body_median.is_finite() && self.body_median >= 1.0) {
            return bad("body_median must be at least 1");
        }
        if !(self.body_sigma.is_finite() && self.body_sigma > 0.0) {
            return bad("body_sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.tail_weight) {
            return bad("tail_weight must be in [0, 1]");
        }
        if !(self.tail_min.is_finite() && self.tail_min >= 1.0) {
            return bad("tail_min must be at least 1");
        }
        if !(self.tail_shape.is_finite() && self.tail_shape > 0.0) {
            return bad("tail_shape must be positive");
        }
        if !(self.tail_max_factor.is_finite()
            && self.tail_max_factor * self.window() as f64 > self.tail_min)
        {
            return bad("tail upper bound must exceed tail_min");
        }
        if self.window() == 0 {
            return bad("context_window must be positive");
        }
        Ok(())
    }
}

/// Inverse-CDF sample of a Pareto distribution truncated to `[lo, hi]`.
fn bounded_pareto(u: f64, lo: f64, hi: f64, shape: f64) -> f64 {
    let tail = 1.0 - u * (1.0 - (lo / hi).powf(shape));
    lo / tail.powf(1.0 / shape)
}

/// Deterministic stream for `(spec, seed)`; ids are `0..` in stream order.
pub fn generate_synthetic_stream(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Document>> {
    spec.validate()?;
    let window = spec.window();
    let body = LogNormal::new(spec.body_median.ln(), spec.body_sigma)
        .map_err(|e| HarnessError::InvalidConfig(format!("synthetic: {e}")))?;
    let hi = spec.tail_max_factor * window as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut docs = Vec::new();
    let mut tokens = 0u64;
    while tokens < spec.total_tokens {
        let raw = if rng.random::<f64>() < spec.tail_weight {
            bounded_pareto(rng.random(), spec.tail_min, hi, spec.tail_shape)
        } else {
            body.sample(&mut rng)
        };
        let length = (raw.round() as u64).clamp(1, window);
        docs.push(Document::new(docs.len() as u64, length, 0));
        tokens += length;
    }
    Ok(docs)
}

/// Document counts per power-of-two length bucket `[2^k, 2^(k+1))`.
pub fn log2_histogram(docs: &[Document]) -> Vec<u64> {
    let mut bins = Vec::new();
    for d in docs {
        let k = d.length.ilog2() as usize;
        if bins.len() <= k {
            bins.resize(k + 1, 0);
        }
        bins[k] += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pareto_inverse_cdf_bounds() {
        assert_eq!(bounded_pareto(0.0, 10.0, 1000.0, 1.1), 10.0);
        assert!((bounded_pareto(1.0, 10.0, 1000.0, 1.1) - 1000.0).abs() < 1e-6);
        assert!(bounded_pareto(0.5, 10.0, 1000.0, 1.1) < 100.0);
    }

    #[test]
    fn stops_at_token_budget() {
        let spec = SyntheticSpec {
            total_tokens: 100_000,
            context_window: Some(8192),
            ..SyntheticSpec::default()
        };
        let docs = generate_synthetic_stream(&spec, 1).unwrap();
        let total: u64 = docs.iter().map(|d| d.length).sum();
        assert!(total >= 100_000);
        assert!(total - docs.last().unwrap().length < 100_000);
        assert!(docs.iter().all(|d| (1..=8192).contains(&d.length)));
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = SyntheticSpec {
            body_sigma: -1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic_stream(&spec, 0).is_err());
        let spec = SyntheticSpec {
            tail_weight: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn histogram_buckets() {
        let docs: Vec<Document> = [1, 2, 3, 4, 7, 8]
            .iter()
            .map(|&l| Document::new(0, l, 0))
            .collect();
        assert_eq!(log2_histogram(&docs), vec![1, 2, 2, 1]);
    }
}
