//! Context-parallel sequence sharding.
//!
//! Both strategies cut `2 * cp` chunks and give worker `i` the symmetric pair
//! `i` and `2 * cp - 1 - i`. Per-sequence sharding cuts the concatenated
//! sequence and ignores document boundaries; per-document sharding cuts
//! every document separately. Per-document remainders (the last
//! `len mod 2cp` tokens of each document) are dealt one token at a time,
//! round-robin, with a cursor that carries over across documents, so no
//! padding is needed as long as the micro-batch length is divisible by
//! `2 * cp`.
//!
//! Kernel shapes: a range `[start, end)` of a document runs as one attention
//! call with `end - start` queries over the `end` keys gathered before it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{
    attention_kernel_latency, doc_pairs, CostProfile, Document, MicroBatch, TokenRange,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardingStrategy {
    PerSequence,
    PerDocument,
}

/// Which strategy a run uses for every micro-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardingPolicy {
    PerSequence,
    PerDocument,
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardAssignment {
    pub strategy: ShardingStrategy,
    pub cp: u32,
    /// Token ranges held by each worker; `per_worker.len() == cp`.
    pub per_worker: Vec<Vec<TokenRange>>,
}

impl ShardAssignment {
    pub fn worker_tokens(&self) -> Vec<u64> {
        self.per_worker
            .iter()
            .map(|rs| rs.iter().map(TokenRange::len).sum())
            .collect()
    }

    /// Causal pair workload of each worker (queries it owns against all
    /// earlier keys of the same document).
    pub fn worker_pair_workloads(&self) -> Vec<u64> {
        self.per_worker
            .iter()
            .map(|rs| {
                rs.iter()
                    .map(|r| doc_pairs(r.end) - doc_pairs(r.start))
                    .sum()
            })
            .collect()
    }

    /// Slowest worker under the kernel model; the CP group waits for it.
    pub fn group_latency(&self, profile: &CostProfile) -> Result<f64> {
        (0..self.per_worker.len()).try_fold(0.0, |acc: f64, w| {
            Ok(acc.max(worker_attention_latency(self, w, profile)?))
        })
    }
}

fn check_divisible(mb: &MicroBatch, cp: u32) -> Result<u64> {
    if cp == 0 {
        return Err(Error::InvalidParallelism("cp must be at least 1"));
    }
    let divisor = 2 * u64::from(cp);
    if !mb.total_length().is_multiple_of(divisor) {
        return Err(Error::NotDivisible {
            length: mb.total_length(),
            divisor,
        });
    }
    Ok(divisor)
}

/// Worker owning chunk `k` of `2 * cp` under symmetric pairing.
#[inline]
fn chunk_owner(k: u64, cp: u64) -> usize {
    (if k < cp { k } else { 2 * cp - 1 - k }) as usize
}

/// `2 * cp` equal chunks over the concatenated sequence.
pub fn per_sequence_shard(mb: &MicroBatch, cp: u32) -> Result<ShardAssignment> {
    let divisor = check_divisible(mb, cp)?;
    let chunk = mb.total_length() / divisor;
    let cpu = u64::from(cp);
    let mut per_worker = alloc::vec![Vec::new(); cp as usize];
    // first/second chunk of every worker, kept apart to order ranges by chunk
    let mut second = alloc::vec![Vec::new(); cp as usize];

    let mut offset = 0u64;
    for doc in mb.docs() {
        let (lo, hi) = (offset, offset + doc.length);
        let mut pos = lo;
        while pos < hi {
            let k = pos / chunk;
            let end = hi.min((k + 1) * chunk);
            let range = TokenRange::new(doc.id, pos - lo, end - lo);
            let w = chunk_owner(k, cpu);
            if k < cpu {
                per_worker[w].push(range);
            } else {
                second[w].push(range);
            }
            pos = end;
        }
        offset = hi;
    }
    for (first, tail) in per_worker.iter_mut().zip(second) {
        first.extend(tail);
    }
    Ok(ShardAssignment {
        strategy: ShardingStrategy::PerSequence,
        cp,
        per_worker,
    })
}

/// Every document cut into `2 * cp` chunks of `len / (2cp)` tokens with
/// symmetric pairing; the remainder tokens are dealt round-robin.
pub fn per_document_shard(mb: &MicroBatch, cp: u32) -> Result<ShardAssignment> {
    let divisor = check_divisible(mb, cp)?;
    let cpu = u64::from(cp);
    let mut per_worker = alloc::vec![Vec::new(); cp as usize];
    let mut cursor = 0u64;
    for doc in mb.docs() {
        let chunk = doc.length / divisor;
        if chunk > 0 {
            for (w, ranges) in per_worker.iter_mut().enumerate() {
                let i = w as u64;
                let j = divisor - 1 - i;
                ranges.push(TokenRange::new(doc.id, i * chunk, (i + 1) * chunk));
                ranges.push(TokenRange::new(doc.id, j * chunk, (j + 1) * chunk));
            }
        }
        for t in divisor * chunk..doc.length {
            per_worker[(cursor % cpu) as usize].push(TokenRange::new(doc.id, t, t + 1));
            cursor += 1;
        }
    }
    Ok(ShardAssignment {
        strategy: ShardingStrategy::PerDocument,
        cp,
        per_worker,
    })
}

/// Sum of kernel latencies over the ranges held by `worker`.
pub fn worker_attention_latency(
    assignment: &ShardAssignment,
    worker: usize,
    profile: &CostProfile,
) -> Result<f64> {
    let ranges = assignment
        .per_worker
        .get(worker)
        .ok_or(Error::InvalidInput("worker index out of range"))?;
    ranges.iter().try_fold(0.0, |acc, r| {
        Ok(acc + attention_kernel_latency(r.len(), r.end, profile)?)
    })
}

/// Shards `mb` both ways and keeps the one with the lower group latency;
/// ties go to per-sequence sharding.
pub fn adaptive_select(
    mb: &MicroBatch,
    cp: u32,
    profile: &CostProfile,
) -> Result<(ShardingStrategy, ShardAssignment)> {
    let seq = per_sequence_shard(mb, cp)?;
    let doc = per_document_shard(mb, cp)?;
    if doc.group_latency(profile)? < seq.group_latency(profile)? {
        Ok((ShardingStrategy::PerDocument, doc))
    } else {
        Ok((ShardingStrategy::PerSequence, seq))
    }
}

/// Shards according to `policy`.
pub fn shard(
    mb: &MicroBatch,
    cp: u32,
    policy: ShardingPolicy,
    profile: &CostProfile,
) -> Result<ShardAssignment> {
    match policy {
        ShardingPolicy::PerSequence => per_sequence_shard(mb, cp),
        ShardingPolicy::PerDocument => per_document_shard(mb, cp),
        ShardingPolicy::Adaptive => adaptive_select(mb, cp, profile).map(|(_, a)| a),
    }
}

/// Appends a filler document so the length becomes a multiple of `divisor`.
pub fn pad_to_multiple(mb: &MicroBatch, divisor: u64, filler_id: u64) -> MicroBatch {
    let short = (divisor - mb.total_length() % divisor) % divisor;
    let mut out = mb.clone();
    if short > 0 {
        let arrival = mb.docs().last().map_or(0, |d| d.arrival_batch);
        out.push(Document::new(filler_id, short, arrival));
    }
    out
}
