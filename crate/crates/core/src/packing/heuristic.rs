//! Variable-length packing with multi-level outlier delay queues.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::workload::{doc_pairs, CostProfile, Document, MicroBatch};

use super::PackingPlan;

/// FIFO waiting queues for outlier documents. Queue `i` holds documents
/// with `thresholds[i] <= length < thresholds[i + 1]`; the last queue is
/// unbounded above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierQueueSet {
    thresholds: Vec<u64>,
    queues: Vec<VecDeque<Document>>,
}

impl OutlierQueueSet {
    /// Empty `thresholds` disables outlier delay entirely.
    pub fn new(thresholds: Vec<u64>) -> Result<Self> {
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidThresholds(
                "thresholds must be strictly increasing",
            ));
        }
        if thresholds.first() == Some(&0) {
            return Err(Error::InvalidThresholds("thresholds must be positive"));
        }
        let queues = thresholds.iter().map(|_| VecDeque::new()).collect();
        Ok(Self { thresholds, queues })
    }

    pub fn thresholds(&self) -> &[u64] {
        &self.thresholds
    }

    pub fn queues(&self) -> &[VecDeque<Document>] {
        &self.queues
    }

    pub fn is_outlier(&self, length: u64) -> bool {
        self.thresholds.first().is_some_and(|&t| length >= t)
    }

    fn queue_index(&self, length: u64) -> Option<usize> {
        self.thresholds
            .partition_point(|&t| t <= length)
            .checked_sub(1)
    }

    /// Enqueues `doc` if it is an outlier; hands it back otherwise.
    pub fn offer(&mut self, doc: Document) -> Option<Document> {
        match self.queue_index(doc.length) {
            Some(i) => {
                self.queues[i].push_back(doc);
                None
            }
            None => Some(doc),
        }
    }

    /// Pops exactly `n` documents (FIFO) from every queue holding at least `n`.
    pub fn release(&mut self, n: usize) -> Vec<Document> {
        let mut out = Vec::new();
        for q in &mut self.queues {
            if n > 0 && q.len() >= n {
                out.extend(q.drain(..n));
            }
        }
        out
    }

    /// Pops up to `n` documents from every queue regardless of its size.
    pub fn release_partial(&mut self, n: usize) -> Vec<Document> {
        let mut out = Vec::new();
        for q in &mut self.queues {
            let k = q.len().min(n);
            out.extend(q.drain(..k));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn tokens(&self) -> u64 {
        self.queues.iter().flatten().map(|d| d.length).sum()
    }
}

/// Stateful packer turning a stream of global batches into `n` micro-batches
/// per iteration.
///
/// Per iteration: outliers from the incoming batch are queued by length
/// bucket; every queue holding at least `n` documents releases `n` of them.
/// The pending set (carried-over documents, then the batch's regular
/// documents, then released outliers) is sorted longest first. Each document
/// goes to the micro-batch with the smallest `W_a + W_l` if the result stays
/// within `l_max`, otherwise to the shortest micro-batch if that fits,
/// otherwise it is carried over to the next iteration. Ties resolve to the
/// lowest micro-batch index.
#[derive(Debug, Clone)]
pub struct HeuristicPacker {
    queues: OutlierQueueSet,
    n: usize,
    l_max: u64,
    profile: CostProfile,
    carried: Vec<Document>,
    iteration: u64,
}

impl HeuristicPacker {
    pub fn new(
        queues: OutlierQueueSet,
        n: usize,
        l_max: u64,
        profile: CostProfile,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "need at least one micro-batch per iteration",
            ));
        }
        if l_max == 0 {
            return Err(Error::InvalidInput("l_max must be positive"));
        }
        Ok(Self {
            queues,
            n,
            l_max,
            profile,
            carried: Vec::new(),
            iteration: 0,
        })
    }

    pub fn queues(&self) -> &OutlierQueueSet {
        &self.queues
    }

    pub fn carried(&self) -> &[Document] {
        &self.carried
    }

    /// Index of the next iteration to be emitted.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Tokens held in queues or carried over.
    pub fn pending_tokens(&self) -> u64 {
        self.queues.tokens() + self.carried.iter().map(|d| d.length).sum::<u64>()
    }

    pub fn is_drained(&self) -> bool {
        self.queues.is_empty() && self.carried.is_empty()
    }

    /// Packs one global batch.
    pub fn step(&mut self, batch: Vec<Document>) -> Result<PackingPlan> {
        if let Some(d) = batch.iter().find(|d| d.length > self.l_max) {
            return Err(Error::DocumentTooLong {
                id: d.id,
                length: d.length,
                bound: self.l_max,
            });
        }
        let mut pending = core::mem::take(&mut self.carried);
        for doc in batch {
            if let Some(regular) = self.queues.offer(doc) {
                pending.push(regular);
            }
        }
        pending.extend(self.queues.release(self.n));
        Ok(self.pack(pending))
    }

    /// One end-of-stream iteration: releases up to `n` documents from every
    /// queue, even undersized ones, together with carried-over documents.
    /// Returns `None` once nothing is pending.
    pub fn flush(&mut self) -> Option<PackingPlan> {
        if self.is_drained() {
            return None;
        }
        let mut pending = core::mem::take(&mut self.carried);
        pending.extend(self.queues.release_partial(self.n));
        Some(self.pack(pending))
    }

    fn pack(&mut self, mut pending: Vec<Document>) -> PackingPlan {
        pending.sort_by_key(|d| core::cmp::Reverse(d.length));

        let (a, b) = (self.profile.attn_coeff, self.profile.linear_coeff);
        let mut mbs = alloc::vec![MicroBatch::default(); self.n];
        let mut pairs = alloc::vec![0u64; self.n];
        let workload = |pairs: u64, len: u64| a * pairs as f64 + b * len as f64;

        for doc in pending {
            let mut w_idx = 0;
            let mut l_idx = 0;
            for j in 1..self.n {
                if workload(pairs[j], mbs[j].total_length())
                    < workload(pairs[w_idx], mbs[w_idx].total_length())
                {
                    w_idx = j;
                }
                if mbs[j].total_length() < mbs[l_idx].total_length() {
                    l_idx = j;
                }
            }
            let target = if mbs[w_idx].total_length() + doc.length <= self.l_max {
                Some(w_idx)
            } else if mbs[l_idx].total_length() + doc.length <= self.l_max {
                Some(l_idx)
            } else {
                None
            };
            match target {
                Some(j) => {
                    pairs[j] += doc_pairs(doc.length);
                    mbs[j].push(doc);
                }
                None => self.carried.push(doc),
            }
        }

        let plan = PackingPlan {
            iteration: self.iteration,
            microbatches: mbs,
            carried_over: self.carried.clone(),
            queued_tokens: self.queues.tokens(),
        };
        self.iteration += 1;
        plan
    }
}
