use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::workload::{doc_pairs, Document, MicroBatch, ParallelismConfig};

use super::PackingPlan;

/// Hands out ids for document pieces created by splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    /// Allocator whose ids cannot collide with any id in `docs`.
    pub fn after(docs: &[Document]) -> Self {
        Self::starting_at(docs.iter().map(|d| d.id + 1).max().unwrap_or(0))
    }

    pub fn fresh(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}

/// Production-style data loader: packs documents in arrival order into
/// sequences of exactly `window` tokens.
///
/// A document crossing the window boundary is split. The head keeps the id
/// and stays in the current sequence; the tail becomes a new document (fresh
/// id) at the front of the stream.
#[derive(Debug, Clone)]
pub struct SequentialLoader<I> {
    source: I,
    window: u64,
    front: VecDeque<Document>,
    ids: IdAllocator,
    splits: u64,
}

impl<I: Iterator<Item = Document>> SequentialLoader<I> {
    pub fn new(source: I, window: u64, ids: IdAllocator) -> Self {
        assert!(window > 0, "window must be positive");
        Self {
            source,
            window,
            front: VecDeque::new(),
            ids,
            splits: 0,
        }
    }

    /// Number of boundary splits performed so far.
    pub fn splits(&self) -> u64 {
        self.splits
    }

    pub fn ids(&self) -> IdAllocator {
        self.ids
    }

    /// Shared allocator, for callers that split pieces further.
    pub fn ids_mut(&mut self) -> &mut IdAllocator {
        &mut self.ids
    }

    /// Next sequence; shorter than the window only when the stream ends.
    pub fn next_microbatch(&mut self) -> Option<MicroBatch> {
        let mut mb = MicroBatch::default();
        while mb.total_length() < self.window {
            let Some(doc) = self.front.pop_front().or_else(|| self.source.next()) else {
                break;
            };
            let room = self.window - mb.total_length();
            if doc.length <= room {
                mb.push(doc);
            } else {
                mb.push(Document {
                    length: room,
                    ..doc
                });
                self.splits += 1;
                self.front.push_front(Document {
                    id: self.ids.fresh(),
                    length: doc.length - room,
                    ..doc
                });
            }
        }
        (!mb.is_empty()).then_some(mb)
    }

    /// `n` full sequences forming one global batch, every document stamped
    /// with `batch_index` as its arrival. Returns `None` when the stream
    /// cannot fill all `n` sequences; the unused documents stay queued and
    /// are available from [`Self::remainder`].
    pub fn next_global_batch(&mut self, n: usize, batch_index: u64) -> Option<Vec<MicroBatch>> {
        let mut out: Vec<MicroBatch> = Vec::with_capacity(n);
        let mut short = None;
        for _ in 0..n {
            match self.next_microbatch() {
                Some(mb) if mb.total_length() == self.window => out.push(mb),
                other => {
                    short = other;
                    break;
                }
            }
        }
        if out.len() < n {
            let docs: Vec<Document> = out
                .into_iter()
                .chain(short)
                .flat_map(MicroBatch::into_docs)
                .collect();
            for d in docs.into_iter().rev() {
                self.front.push_front(d);
            }
            return None;
        }
        Some(
            out.into_iter()
                .map(|mb| {
                    mb.into_docs()
                        .into_iter()
                        .map(|d| Document {
                            arrival_batch: batch_index,
                            ..d
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Documents not yet handed out (including pieces of an unfinished batch).
    pub fn remainder(mut self) -> Vec<Document> {
        let mut rest: Vec<Document> = self.front.drain(..).collect();
        rest.extend(self.source);
        rest
    }
}

/// Original packing: sequences of exactly `context_window` tokens in arrival
/// order with tail truncation into the next sequence. Only the last sequence
/// may be short, when the stream runs out.
pub fn baseline_sequential_pack(stream: &[Document], config: &ParallelismConfig) -> PackingPlan {
    let mut loader = SequentialLoader::new(
        stream.iter().copied(),
        config.context_window,
        IdAllocator::after(stream),
    );
    let mut microbatches = Vec::new();
    while let Some(mb) = loader.next_microbatch() {
        microbatches.push(mb);
    }
    PackingPlan {
        microbatches,
        ..PackingPlan::default()
    }
}

/// Fixed-length greedy packing into `m` sequences of exactly `l` tokens.
///
/// Documents are taken longest first. Each goes to the micro-batch with the
/// smallest attention workload that can hold it whole; when none can, it is
/// split at the capacity boundary of the least-loaded micro-batch that still
/// has room, and the tail (fresh id from `ids`) is placed the same way.
pub fn fixed_len_greedy_pack(
    docs: &[Document],
    m: usize,
    l: u64,
    ids: &mut IdAllocator,
) -> Result<PackingPlan> {
    if m == 0 || l == 0 {
        return Err(Error::Infeasible(
            "need at least one micro-batch of positive length",
        ));
    }
    let total: u64 = docs.iter().map(|d| d.length).sum();
    if total != m as u64 * l {
        return Err(Error::Infeasible("document tokens must equal M * L"));
    }
    let mut order: Vec<&Document> = docs.iter().collect();
    order.sort_by_key(|d| core::cmp::Reverse(d.length));

    let mut mbs = alloc::vec![MicroBatch::default(); m];
    let mut work = alloc::vec![0u64; m];
    let argmin = |work: &[u64], ok: &dyn Fn(usize) -> bool| {
        (0..work.len())
            .filter(|&j| ok(j))
            .min_by_key(|&j| (work[j], j))
    };

    for &doc in &order {
        let mut piece = *doc;
        loop {
            let whole = argmin(&work, &|j| mbs[j].total_length() + piece.length <= l);
            if let Some(j) = whole {
                work[j] += doc_pairs(piece.length);
                mbs[j].push(piece);
                break;
            }
            // total == m * l, so some micro-batch still has room here.
            let j = argmin(&work, &|j| mbs[j].total_length() < l).expect("capacity left");
            let room = l - mbs[j].total_length();
            work[j] += doc_pairs(room);
            mbs[j].push(Document {
                length: room,
                ..piece
            });
            piece = Document {
                id: ids.fresh(),
                length: piece.length - room,
                ..piece
            };
        }
    }
    Ok(PackingPlan {
        microbatches: mbs,
        ..PackingPlan::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn docs(lengths: &[u64]) -> Vec<Document> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Document::new(i as u64, l, 0))
            .collect()
    }

    fn lengths(mb: &MicroBatch) -> Vec<u64> {
        mb.lengths().collect()
    }

    #[test]
    fn baseline_truncates_at_window() {
        let cfg = ParallelismConfig {
            context_window: 8,
            cp: 1,
            ..ParallelismConfig::default()
        };
        let plan = baseline_sequential_pack(&docs(&[5, 5, 6]), &cfg);
        assert_eq!(plan.microbatches.len(), 2);
        assert_eq!(lengths(&plan.microbatches[0]), vec![5, 3]);
        assert_eq!(lengths(&plan.microbatches[1]), vec![2, 6]);
        // head keeps the id, tail gets a fresh one
        assert_eq!(plan.microbatches[0].docs()[1].id, 1);
        assert_eq!(plan.microbatches[1].docs()[0].id, 3);
    }

    #[test]
    fn baseline_exact_fit() {
        let cfg = ParallelismConfig {
            context_window: 8,
            cp: 1,
            ..ParallelismConfig::default()
        };
        let plan = baseline_sequential_pack(&docs(&[8]), &cfg);
        assert_eq!(plan.microbatches.len(), 1);
        assert_eq!(lengths(&plan.microbatches[0]), vec![8]);
    }

    #[test]
    fn loader_global_batches_and_remainder() {
        let stream = docs(&[5, 5, 6, 3]);
        let mut loader =
            SequentialLoader::new(stream.clone().into_iter(), 8, IdAllocator::after(&stream));
        let gb = loader.next_global_batch(1, 7).unwrap();
        assert_eq!(lengths(&gb[0]), vec![5, 3]);
        assert!(gb[0].docs().iter().all(|d| d.arrival_batch == 7));
        assert!(loader.next_global_batch(2, 8).is_none());
        let rest = loader.remainder();
        assert_eq!(
            rest.iter().map(|d| d.length).collect::<Vec<_>>(),
            vec![2, 6, 3]
        );
    }

    #[test]
    fn greedy_longest_first() {
        let mut ids = IdAllocator::starting_at(100);
        let plan = fixed_len_greedy_pack(&docs(&[8, 4, 4]), 2, 8, &mut ids).unwrap();
        assert_eq!(lengths(&plan.microbatches[0]), vec![8]);
        assert_eq!(lengths(&plan.microbatches[1]), vec![4, 4]);
        let w: Vec<u64> = plan
            .microbatches
            .iter()
            .map(MicroBatch::attention_workload)
            .collect();
        assert_eq!(w, vec![36, 20]);
    }

    #[test]
    fn greedy_equal_docs_balance() {
        let mut ids = IdAllocator::starting_at(100);
        let plan = fixed_len_greedy_pack(&docs(&[4; 8]), 4, 8, &mut ids).unwrap();
        assert_eq!(
            super::super::imbalance_degree_attention(&plan.microbatches).unwrap(),
            1.0
        );
    }

    #[test]
    fn greedy_splits_when_nothing_fits() {
        let mut ids = IdAllocator::starting_at(100);
        let plan = fixed_len_greedy_pack(&docs(&[6, 6, 4]), 2, 8, &mut ids).unwrap();
        for mb in &plan.microbatches {
            assert_eq!(mb.total_length(), 8);
        }
        assert_eq!(ids.peek(), 101);
    }

    #[test]
    fn greedy_rejects_wrong_total() {
        let mut ids = IdAllocator::starting_at(0);
        assert!(fixed_len_greedy_pack(&docs(&[8, 4]), 2, 8, &mut ids).is_err());
    }
}
