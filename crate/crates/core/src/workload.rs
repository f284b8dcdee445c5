//! Domain types and the analytic cost model.
//!
//! Two attention models coexist on purpose:
//!
//! - the *pair-count* model counts causal (query, key) pairs under a
//!   block-diagonal document mask. It is exact, additive and decomposes over
//!   token ranges, so packing and sharding balance checks are done with it.
//! - the *kernel* model ([`attention_kernel_latency`]) prices a single
//!   attention call from its tensor shape, including query padding to the
//!   kernel tile and a throughput curve keyed on query length. CP sharding
//!   decisions and the pipeline simulator use it.
//!
//! Peer-to-peer transfer time at pipeline stage boundaries is folded into the
//! linear term.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    /// Token count, at least 1.
    pub length: u64,
    /// Index of the global batch in which the document was first loaded.
    pub arrival_batch: u64,
}

impl Document {
    pub fn new(id: u64, length: u64, arrival_batch: u64) -> Self {
        Self {
            id,
            length,
            arrival_batch,
        }
    }
}

/// An ordered list of documents packed into one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MicroBatch {
    docs: Vec<Document>,
    total_length: u64,
}

impl MicroBatch {
    pub fn new(docs: Vec<Document>) -> Self {
        let total_length = docs.iter().map(|d| d.length).sum();
        Self { docs, total_length }
    }

    pub fn push(&mut self, doc: Document) {
        self.total_length += doc.length;
        self.docs.push(doc);
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }

    pub fn total_length(&self) -> u64 {
        self.total_length
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn lengths(&self) -> impl Iterator<Item = u64> + '_ {
        self.docs.iter().map(|d| d.length)
    }

    /// Causal pair count of the whole micro-batch.
    pub fn attention_workload(&self) -> u64 {
        self.lengths().map(doc_pairs).sum()
    }
}

impl FromIterator<Document> for MicroBatch {
    fn from_iter<I: IntoIterator<Item = Document>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Degrees of the four parallelism dimensions plus the packing geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelismConfig {
    pub tp: u32,
    pub cp: u32,
    pub pp: u32,
    pub dp: u32,
    /// Context window in tokens, the fixed-length packing capacity.
    pub context_window: u64,
    /// Micro-batches per training step across all DP replicas.
    pub microbatches_per_step: u32,
}

impl Default for ParallelismConfig {
    fn default() -> Self {
        Self {
            tp: 8,
            cp: 4,
            pp: 4,
            dp: 2,
            context_window: 128 * 1024,
            microbatches_per_step: 8,
        }
    }
}

impl ParallelismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tp == 0 || self.cp == 0 || self.pp == 0 || self.dp == 0 {
            return Err(Error::InvalidParallelism(
                "all parallel degrees must be at least 1",
            ));
        }
        if self.context_window == 0 {
            return Err(Error::InvalidParallelism(
                "context_window must be at least 1",
            ));
        }
        if self.microbatches_per_step == 0 {
            return Err(Error::InvalidParallelism(
                "microbatches_per_step must be at least 1",
            ));
        }
        if !self.context_window.is_multiple_of(self.shard_divisor()) {
            return Err(Error::InvalidParallelism(
                "context_window must be divisible by 2*cp",
            ));
        }
        if !self.microbatches_per_step.is_multiple_of(self.dp) {
            return Err(Error::InvalidParallelism(
                "microbatches_per_step must be divisible by dp",
            ));
        }
        Ok(())
    }

    /// `2 * cp`, the chunk count of both sharding strategies.
    pub fn shard_divisor(&self) -> u64 {
        2 * u64::from(self.cp)
    }

    pub fn microbatches_per_replica(&self) -> usize {
        (self.microbatches_per_step / self.dp) as usize
    }
}

/// One breakpoint of the achieved-throughput curve. The throughput applies
/// to every unpadded query length at or above `q_len`, up to the next point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePoint {
    pub q_len: u64,
    /// Operations per second.
    pub throughput: f64,
}

/// Calibration record for every latency projection.
///
/// The shipped default is a calibration, not ground truth: linear work
/// dominates short documents and attention dominates past a crossover of
/// `2 * linear_coeff / attn_coeff` tokens (8K with the defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostProfile {
    /// Seconds per causal token pair.
    pub attn_coeff: f64,
    /// Seconds per token for GEMM, collective and element-wise work.
    pub linear_coeff: f64,
    /// Fixed seconds per micro-batch.
    pub linear_const: f64,
    /// Attention kernel query tile, in tokens.
    pub tile_size: u64,
    /// Kernel operations per (padded query, key) element.
    pub op_scale: f64,
    /// Piecewise-constant achieved throughput, keyed on unpadded query length.
    pub tflops_curve: Vec<CurvePoint>,
    /// Operations per second; upper bound for every curve point.
    pub peak_throughput: f64,
    /// Backward latency as a multiple of forward latency.
    pub backward_ratio: f64,
}

impl Default for CostProfile {
    fn default() -> Self {
        let attn_coeff = 2.0e-10;
        let high = 520.0e12;
        Self {
            attn_coeff,
            linear_coeff: 4096.0 * attn_coeff,
            linear_const: 2.0e-3,
            tile_size: 128,
            // Long chunks at the top of the curve cost about `attn_coeff`
            // per causal pair (the kernel computes the full q x kv block).
            op_scale: attn_coeff / 2.0 * high,
            tflops_curve: alloc::vec![
                CurvePoint {
                    q_len: 0,
                    throughput: 300.0e12
                },
                CurvePoint {
                    q_len: 256,
                    throughput: 460.0e12
                },
                CurvePoint {
                    q_len: 1024,
                    throughput: high
                },
            ],
            peak_throughput: 989.0e12,
            backward_ratio: 2.0,
        }
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl CostProfile {
    pub fn validate(&self) -> Result<()> {
        if !finite_nonneg(self.attn_coeff)
            || !finite_nonneg(self.linear_coeff)
            || !finite_nonneg(self.linear_const)
        {
            return Err(Error::InvalidProfile(
                "coefficients must be finite and non-negative",
            ));
        }
        if self.tile_size == 0 {
            return Err(Error::InvalidProfile("tile_size must be at least 1"));
        }
        if !(self.op_scale.is_finite() && self.op_scale > 0.0) {
            return Err(Error::InvalidProfile("op_scale must be positive"));
        }
        if !(self.peak_throughput.is_finite() && self.peak_throughput > 0.0) {
            return Err(Error::InvalidProfile("peak_throughput must be positive"));
        }
        if !finite_nonneg(self.backward_ratio) {
            return Err(Error::InvalidProfile(
                "backward_ratio must be finite and non-negative",
            ));
        }
        if self.tflops_curve.is_empty() {
            return Err(Error::InvalidProfile(
                "tflops_curve needs at least one point",
            ));
        }
        if self
            .tflops_curve
            .windows(2)
            .any(|w| w[0].q_len >= w[1].q_len)
        {
            return Err(Error::InvalidProfile(
                "tflops_curve thresholds must be strictly increasing",
            ));
        }
        if self.tflops_curve.iter().any(|p| {
            !(p.throughput.is_finite()
                && p.throughput > 0.0
                && p.throughput <= self.peak_throughput)
        }) {
            return Err(Error::InvalidProfile(
                "curve throughputs must be positive and at most peak_throughput",
            ));
        }
        Ok(())
    }

    /// Achieved throughput for an unpadded query length. Lengths below the
    /// first breakpoint use the first segment.
    pub fn throughput(&self, q_len: u64) -> f64 {
        let idx = self.tflops_curve.partition_point(|p| p.q_len <= q_len);
        self.tflops_curve[idx.saturating_sub(1)].throughput
    }

    /// Query length rounded up to a whole number of tiles.
    pub fn padded_q_len(&self, q_len: u64) -> u64 {
        q_len.div_ceil(self.tile_size) * self.tile_size
    }
}

/// A chunk `[start, end)` of one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenRange {
    pub doc_id: u64,
    pub start: u64,
    pub end: u64,
}

impl TokenRange {
    pub fn new(doc_id: u64, start: u64, end: u64) -> Self {
        Self { doc_id, start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[inline]
pub(crate) fn doc_pairs(d: u64) -> u64 {
    d * (d + 1) / 2
}

/// Causal (query, key) pairs summed over documents: `sum d(d+1)/2`.
pub fn attention_workload(doc_lengths: &[u64]) -> u64 {
    doc_lengths.iter().copied().map(doc_pairs).sum()
}

/// Pairs for the queries in `range`, each attending to every earlier token
/// of its document: `sum_{k=start}^{end-1} (k+1)`.
pub fn range_attention_workload(doc_length: u64, range: &TokenRange) -> Result<u64> {
    if range.start >= range.end || range.end > doc_length {
        return Err(Error::InvalidRange {
            start: range.start,
            end: range.end,
            doc_length,
        });
    }
    Ok(doc_pairs(range.end) - doc_pairs(range.start))
}

/// `W_l(x) = linear_coeff * x + linear_const`.
pub fn linear_workload_latency(seq_length: u64, profile: &CostProfile) -> f64 {
    profile.linear_coeff * seq_length as f64 + profile.linear_const
}

/// `W_a`: `attn_coeff` times the causal pair count.
pub fn attention_workload_latency(doc_lengths: &[u64], profile: &CostProfile) -> f64 {
    profile.attn_coeff * attention_workload(doc_lengths) as f64
}

/// Canonical per-micro-batch workload: `W_a(doc lengths) + W_l(total)`.
pub fn microbatch_latency(mb: &MicroBatch, profile: &CostProfile) -> f64 {
    profile.attn_coeff * mb.attention_workload() as f64
        + linear_workload_latency(mb.total_length(), profile)
}

/// Latency of one attention call with `q_len` queries over `kv_len` keys.
///
/// Queries are padded to the tile size; throughput is looked up on the
/// unpadded length.
pub fn attention_kernel_latency(q_len: u64, kv_len: u64, profile: &CostProfile) -> Result<f64> {
    if q_len == 0 {
        return Ok(0.0);
    }
    if kv_len == 0 {
        return Err(Error::EmptyKeyValue { q_len });
    }
    let ops = profile.op_scale * profile.padded_q_len(q_len) as f64 * kv_len as f64;
    Ok(ops / profile.throughput(q_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_pairs(doc: u64, start: u64, end: u64) -> u64 {
        let mut n = 0;
        for q in start..end {
            for k in 0..doc {
                if k <= q {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn pair_counts() {
        assert_eq!(attention_workload(&[4]), 10);
        assert_eq!(attention_workload(&[3, 5]), 21);
        assert_eq!(attention_workload(&[]), 0);
        let one = attention_workload(&[128_000]) as f64;
        let two = attention_workload(&[64_000, 64_000]) as f64;
        let brute_ratio = (128_000.0 * 128_001.0) / (2.0 * 64_000.0 * 64_001.0);
        assert!((one / two - brute_ratio).abs() < 1e-12);
        assert!((one / two - 2.0).abs() < 1e-4);
    }

    #[test]
    fn range_pairs_match_brute_force() {
        assert_eq!(brute_pairs(8, 0, 4), 10);
        assert_eq!(brute_pairs(8, 4, 8), 26);
        assert_eq!(
            range_attention_workload(8, &TokenRange::new(0, 0, 4)).unwrap(),
            10
        );
        assert_eq!(
            range_attention_workload(8, &TokenRange::new(0, 4, 8)).unwrap(),
            26
        );
        assert_eq!(
            range_attention_workload(8, &TokenRange::new(0, 0, 8)).unwrap(),
            attention_workload(&[8])
        );
        for d in 1..12 {
            for s in 0..d {
                for e in s + 1..=d {
                    assert_eq!(
                        range_attention_workload(d, &TokenRange::new(0, s, e)).unwrap(),
                        brute_pairs(d, s, e)
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_ranges() {
        assert!(range_attention_workload(8, &TokenRange::new(0, 4, 4)).is_err());
        assert!(range_attention_workload(8, &TokenRange::new(0, 5, 9)).is_err());
    }

    #[test]
    fn linear_projection() {
        let p = CostProfile::default();
        assert_eq!(linear_workload_latency(0, &p), p.linear_const);
        let a = linear_workload_latency(1000, &p) - p.linear_const;
        let b = linear_workload_latency(2000, &p) - p.linear_const;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn default_profile_crossover() {
        let p = CostProfile::default();
        p.validate().unwrap();
        let wl = linear_workload_latency(128 * 1024, &p);
        assert!(wl > attention_workload_latency(&[16 * 1024], &p));
        assert!(wl < attention_workload_latency(&[128 * 1024], &p));
    }

    #[test]
    fn attention_latency_formula() {
        let p = CostProfile {
            attn_coeff: 1e-9,
            ..CostProfile::default()
        };
        assert_eq!(attention_workload_latency(&[], &p), 0.0);
        assert_eq!(attention_workload_latency(&[1000], &p), 1e-9 * 500_500.0);
        let d = 100_000u64;
        let ratio =
            attention_workload_latency(&[d], &p) / attention_workload_latency(&[d / 2, d / 2], &p);
        let expect = (d * (d + 1)) as f64 / (2.0 * (d / 2) as f64 * (d / 2 + 1) as f64);
        assert!((ratio - expect).abs() < 1e-12);
        assert!((ratio - 2.0).abs() < 1e-4);
    }

    #[test]
    fn microbatch_latency_terms() {
        let p = CostProfile::default();
        assert_eq!(
            microbatch_latency(&MicroBatch::default(), &p),
            p.linear_const
        );
        let single = MicroBatch::new(alloc::vec![Document::new(0, 5000, 0)]);
        let expect = attention_workload_latency(&[5000], &p) + linear_workload_latency(5000, &p);
        assert!((microbatch_latency(&single, &p) - expect).abs() < 1e-15);

        let k = 1024u64;
        let long = MicroBatch::new(alloc::vec![Document::new(0, 128 * k, 0)]);
        let short: MicroBatch = (0..8).map(|i| Document::new(i, 16 * k, 0)).collect();
        assert_eq!(long.total_length(), short.total_length());
        let diff = microbatch_latency(&long, &p) - microbatch_latency(&short, &p);
        let attn_diff =
            p.attn_coeff * (long.attention_workload() - short.attention_workload()) as f64;
        assert!((diff - attn_diff).abs() / attn_diff < 1e-12);
        let pair_ratio = long.attention_workload() as f64 / short.attention_workload() as f64;
        assert!((pair_ratio - 8.0).abs() < 1e-3);
    }

    #[test]
    fn kernel_tile_padding() {
        let p = CostProfile::default();
        let at = |q, kv| attention_kernel_latency(q, kv, &p).unwrap();
        assert_eq!(at(64, 1024), at(128, 1024));
        assert_eq!(at(16, 1024), at(128, 1024));
        assert!(at(129, 1024) > at(128, 1024));
        assert!(p.throughput(256) > p.throughput(128));
        assert_eq!(at(0, 0), 0.0);
        assert!(attention_kernel_latency(1, 0, &p).is_err());
    }

    #[test]
    fn throughput_lookup_is_piecewise_constant() {
        let p = CostProfile::default();
        assert_eq!(p.throughput(1), 300.0e12);
        assert_eq!(p.throughput(255), 300.0e12);
        assert_eq!(p.throughput(256), 460.0e12);
        assert_eq!(p.throughput(1 << 20), 520.0e12);
        let late = CostProfile {
            tflops_curve: alloc::vec![CurvePoint {
                q_len: 64,
                throughput: 1.0e12
            }],
            ..CostProfile::default()
        };
        assert_eq!(late.throughput(1), 1.0e12);
    }

    #[test]
    fn profile_validation() {
        let mut p = CostProfile::default();
        p.tflops_curve[1].q_len = 0;
        assert!(p.validate().is_err());
        let mut p = CostProfile::default();
        p.tflops_curve[0].throughput = 2.0e15;
        assert!(p.validate().is_err());
        let p = CostProfile {
            tile_size: 0,
            ..CostProfile::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn parallelism_validation() {
        assert!(ParallelismConfig::default().validate().is_ok());
        let c = ParallelismConfig {
            context_window: 100,
            cp: 4,
            ..ParallelismConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ParallelismConfig {
            pp: 0,
            ..ParallelismConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ParallelismConfig {
            microbatches_per_step: 3,
            dp: 2,
            ..ParallelismConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
