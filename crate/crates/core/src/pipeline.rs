//! Latency composition across CP, PP and DP.
//!
//! Every PP stage of micro-batch `i` costs `f_i` forward and `b_i` backward.
//! The analytic critical path charges the heaviest micro-batch for the whole
//! pipeline depth and the others once on the first stage;
//! [`event_sim`] replays an explicit schedule (1F1B or GPipe) and serves as
//! the reference the closed form is checked against.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packing::{imbalance_degree_attention, imbalance_degree_latency, PackingPlan};
use crate::sharding::{
    adaptive_select, pad_to_multiple, per_document_shard, per_sequence_shard, ShardingPolicy,
    ShardingStrategy,
};
use crate::workload::{linear_workload_latency, CostProfile, MicroBatch, ParallelismConfig};

/// Per-stage cost of one micro-batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub forward: f64,
    pub backward: f64,
}

impl StageLatency {
    pub fn total(&self) -> f64 {
        self.forward + self.backward
    }
}

/// Outcome of simulating one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    /// Document tokens trained in the step, filler excluded.
    pub tokens: u64,
    pub per_microbatch_latency: Vec<StageLatency>,
    pub strategies: Vec<ShardingStrategy>,
    /// Critical path of every DP replica.
    pub replica_critical_paths: Vec<f64>,
    pub dp_step_latency: f64,
    /// Over all micro-batches of the step; 1.0 for an all-empty step.
    pub imbalance_attention: f64,
    /// Worst replica.
    pub imbalance_latency: f64,
}

/// Filler id used to pad micro-batches up to a multiple of `2 * cp`.
pub const FILLER_DOC_ID: u64 = u64::MAX;

/// Stage cost of `mb` under `policy`, together with the strategy used.
///
/// The micro-batch is padded with a filler document up to a multiple of
/// `2 * cp`. Forward is the slowest CP worker's attention plus the linear
/// cost of its `tokens / cp` share, split evenly over the `pp` stages.
/// An empty micro-batch costs nothing.
pub fn microbatch_stage_latency(
    mb: &MicroBatch,
    config: &ParallelismConfig,
    policy: ShardingPolicy,
    profile: &CostProfile,
) -> Result<(StageLatency, ShardingStrategy)> {
    if config.cp == 0 || config.pp == 0 {
        return Err(Error::InvalidParallelism("cp and pp must be at least 1"));
    }
    let default_strategy = match policy {
        ShardingPolicy::PerDocument => ShardingStrategy::PerDocument,
        _ => ShardingStrategy::PerSequence,
    };
    if mb.is_empty() {
        return Ok((StageLatency::default(), default_strategy));
    }
    let padded = pad_to_multiple(mb, config.shard_divisor(), FILLER_DOC_ID);
    let (strategy, assignment) = match policy {
        ShardingPolicy::PerSequence => (
            ShardingStrategy::PerSequence,
            per_sequence_shard(&padded, config.cp)?,
        ),
        ShardingPolicy::PerDocument => (
            ShardingStrategy::PerDocument,
            per_document_shard(&padded, config.cp)?,
        ),
        ShardingPolicy::Adaptive => adaptive_select(&padded, config.cp, profile)?,
    };
    let per_worker_tokens = padded.total_length() / u64::from(config.cp);
    let forward = (assignment.group_latency(profile)?
        + linear_workload_latency(per_worker_tokens, profile))
        / f64::from(config.pp);
    Ok((
        StageLatency {
            forward,
            backward: profile.backward_ratio * forward,
        },
        strategy,
    ))
}

/// Closed-form step latency of one PP pipeline. Ties for the heaviest
/// micro-batch go to the lowest index; an empty list gives 0.
pub fn pp_critical_path(latencies: &[StageLatency], pp: u32) -> f64 {
    let mut heaviest: Option<usize> = None;
    for (i, l) in latencies.iter().enumerate() {
        if heaviest.is_none_or(|h| l.total() > latencies[h].total()) {
            heaviest = Some(i);
        }
    }
    let Some(h) = heaviest else {
        return 0.0;
    };
    let rest: f64 = latencies
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != h)
        .map(|(_, l)| l.total())
        .sum();
    f64::from(pp) * latencies[h].total() + rest
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Forward(usize),
    Backward(usize),
}

/// Per-stage op order replayed by [`event_sim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Warm-up forwards, alternating steady state, cool-down backwards.
    #[default]
    OneFOneB,
    /// All forwards, then all backwards in reverse micro-batch order.
    GPipe,
}

fn stage_schedule(schedule: Schedule, k: usize, pp: usize, m: usize) -> Vec<Op> {
    if schedule == Schedule::GPipe {
        return (0..m)
            .map(Op::Forward)
            .chain((0..m).rev().map(Op::Backward))
            .collect();
    }
    let warmup = (pp - k - 1).min(m);
    let mut ops: Vec<Op> = (0..warmup).map(Op::Forward).collect();
    for i in 0..m - warmup {
        ops.push(Op::Forward(warmup + i));
        ops.push(Op::Backward(i));
    }
    ops.extend((m - warmup..m).map(Op::Backward));
    ops
}

/// Makespan of a 1F1B pipeline; see [`event_sim`].
pub fn event_sim_1f1b(latencies: &[StageLatency], pp: u32) -> f64 {
    event_sim(latencies, pp, Schedule::OneFOneB)
}

/// Makespan of a pipeline in which micro-batch `i` costs `f_i`/`b_i` on
/// every stage.
///
/// Each stage executes its ops in schedule order; an op becomes ready when
/// its predecessor on the same stage has finished and its cross-stage input
/// exists (forward from the previous stage, backward from the next one, or
/// the own forward on the last stage).
pub fn event_sim(latencies: &[StageLatency], pp: u32, schedule: Schedule) -> f64 {
    let pp = pp.max(1) as usize;
    let m = latencies.len();
    if m == 0 {
        return 0.0;
    }
    let schedules: Vec<Vec<Op>> = (0..pp)
        .map(|k| stage_schedule(schedule, k, pp, m))
        .collect();
    let mut next = alloc::vec![0usize; pp];
    let mut stage_free = alloc::vec![0.0f64; pp];
    let mut fwd_done: Vec<Vec<Option<f64>>> = alloc::vec![alloc::vec![None; m]; pp];
    let mut bwd_done: Vec<Vec<Option<f64>>> = alloc::vec![alloc::vec![None; m]; pp];

    // Completion events ordered by time, then stage; times are finite and
    // non-negative so their bit patterns order like the values.
    let mut events: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut makespan = 0.0f64;

    let try_start = |k: usize,
                     next: &mut [usize],
                     stage_free: &mut [f64],
                     fwd_done: &mut [Vec<Option<f64>>],
                     bwd_done: &mut [Vec<Option<f64>>],
                     events: &mut BinaryHeap<Reverse<(u64, usize)>>| {
        let Some(&op) = schedules[k].get(next[k]) else {
            return;
        };
        let input = match op {
            Op::Forward(_) if k == 0 => Some(0.0),
            Op::Forward(i) => fwd_done[k - 1][i],
            Op::Backward(i) if k == pp - 1 => fwd_done[k][i],
            Op::Backward(i) => bwd_done[k + 1][i],
        };
        let Some(ready) = input else {
            return;
        };
        let start = ready.max(stage_free[k]);
        let end = match op {
            Op::Forward(i) => {
                let t = start + latencies[i].forward;
                fwd_done[k][i] = Some(t);
                t
            }
            Op::Backward(i) => {
                let t = start + latencies[i].backward;
                bwd_done[k][i] = Some(t);
                t
            }
        };
        stage_free[k] = end;
        next[k] += 1;
        events.push(Reverse((end.to_bits(), k)));
    };

    for k in 0..pp {
        try_start(
            k,
            &mut next,
            &mut stage_free,
            &mut fwd_done,
            &mut bwd_done,
            &mut events,
        );
    }
    while let Some(Reverse((bits, k))) = events.pop() {
        makespan = makespan.max(f64::from_bits(bits));
        // The finished op may unblock this stage and both neighbours.
        for s in [Some(k), k.checked_sub(1), (k + 1 < pp).then_some(k + 1)]
            .into_iter()
            .flatten()
        {
            if events.iter().all(|Reverse((_, busy))| *busy != s) {
                try_start(
                    s,
                    &mut next,
                    &mut stage_free,
                    &mut fwd_done,
                    &mut bwd_done,
                    &mut events,
                );
            }
        }
    }
    debug_assert!(next.iter().zip(&schedules).all(|(&n, s)| n == s.len()));
    makespan
}

/// DP replicas synchronise, so the step takes as long as the slowest one.
pub fn dp_step_latency(replica_paths: &[f64]) -> f64 {
    replica_paths.iter().copied().fold(0.0, f64::max)
}

/// Simulates one step: replica `r` runs micro-batches
/// `[r * N / dp, (r + 1) * N / dp)` of the plan.
pub fn simulate_step(
    plan: &PackingPlan,
    config: &ParallelismConfig,
    policy: ShardingPolicy,
    profile: &CostProfile,
) -> Result<StepReport> {
    let dp = config.dp as usize;
    if dp == 0 || !plan.microbatches.len().is_multiple_of(dp) || plan.microbatches.is_empty() {
        return Err(Error::InvalidInput(
            "micro-batch count must be a positive multiple of dp",
        ));
    }
    let mut per_microbatch_latency = Vec::with_capacity(plan.microbatches.len());
    let mut strategies = Vec::with_capacity(plan.microbatches.len());
    for mb in &plan.microbatches {
        let (lat, s) = microbatch_stage_latency(mb, config, policy, profile)?;
        per_microbatch_latency.push(lat);
        strategies.push(s);
    }
    let per_replica = plan.microbatches.len() / dp;
    let replica_critical_paths: Vec<f64> = per_microbatch_latency
        .chunks(per_replica)
        .map(|c| pp_critical_path(c, config.pp))
        .collect();

    let all_empty = plan.microbatches.iter().all(MicroBatch::is_empty);
    let (imbalance_attention, imbalance_latency) = if all_empty {
        (1.0, 1.0)
    } else {
        let latency = plan
            .microbatches
            .chunks(per_replica)
            .map(|c| imbalance_degree_latency(c, profile))
            .try_fold(0.0, |acc: f64, r| r.map(|v| acc.max(v)))?;
        (imbalance_degree_attention(&plan.microbatches)?, latency)
    };

    Ok(StepReport {
        iteration: plan.iteration,
        tokens: plan.packed_tokens(),
        dp_step_latency: dp_step_latency(&replica_critical_paths),
        per_microbatch_latency,
        strategies,
        replica_critical_paths,
        imbalance_attention,
        imbalance_latency,
    })
}

/// Training throughput (tokens per simulated second) of `candidate` over
/// that of `baseline`. With equal token counts this is the ratio of total
/// step latencies; normalising by tokens keeps streams comparable when one
/// side trains a few more documents or adds flush steps.
pub fn simulated_speedup(baseline: &[StepReport], candidate: &[StepReport]) -> Result<f64> {
    let throughput = |rs: &[StepReport]| {
        let time: f64 = rs.iter().map(|r| r.dp_step_latency).sum();
        let tokens: u64 = rs.iter().map(|r| r.tokens).sum();
        (time > 0.0 && tokens > 0).then(|| tokens as f64 / time)
    };
    match (throughput(baseline), throughput(candidate)) {
        (Some(a), Some(b)) => Ok(b / a),
        _ => Err(Error::InvalidInput(
            "speedup needs positive tokens and latency on both sides",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{microbatch_latency, Document};
    use alloc::vec;

    fn sl(pairs: &[(f64, f64)]) -> Vec<StageLatency> {
        pairs
            .iter()
            .map(|&(forward, backward)| StageLatency { forward, backward })
            .collect()
    }

    fn mb(lengths: &[u64]) -> MicroBatch {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Document::new(i as u64, l, 0))
            .collect()
    }

    #[test]
    fn critical_path_examples() {
        let l = sl(&[(2.0, 4.0), (1.0, 2.0)]);
        assert_eq!(pp_critical_path(&l, 1), 9.0);
        assert_eq!(pp_critical_path(&l, 2), 15.0);
        let same = sl(&[(1.0, 2.0); 5]);
        assert_eq!(pp_critical_path(&same, 4), 4.0 * 3.0 + 4.0 * 3.0);
        assert_eq!(pp_critical_path(&[], 4), 0.0);
    }

    #[test]
    fn event_sim_two_stage_example() {
        let l = sl(&[(2.0, 4.0), (1.0, 2.0)]);
        assert_eq!(event_sim_1f1b(&l, 2), 14.0);
        assert_eq!(event_sim_1f1b(&l, 1), 9.0);
    }

    #[test]
    fn event_sim_balanced_matches_closed_form() {
        for pp in 1..=6 {
            for m in 1..=10 {
                let l = sl(&vec![(1.5, 3.0); m]);
                let analytic = pp_critical_path(&l, pp);
                assert_eq!(event_sim_1f1b(&l, pp), analytic, "pp={pp} m={m}");
                assert_eq!(analytic, (m as f64 + f64::from(pp) - 1.0) * 4.5);
            }
        }
    }

    #[test]
    fn schedule_shape() {
        use Op::*;
        let one_f_one_b = Schedule::OneFOneB;
        assert_eq!(
            stage_schedule(one_f_one_b, 0, 2, 2),
            vec![Forward(0), Forward(1), Backward(0), Backward(1)]
        );
        assert_eq!(
            stage_schedule(one_f_one_b, 1, 2, 2),
            vec![Forward(0), Backward(0), Forward(1), Backward(1)]
        );
        // fewer micro-batches than warm-up slots
        assert_eq!(
            stage_schedule(one_f_one_b, 0, 4, 2),
            vec![Forward(0), Forward(1), Backward(0), Backward(1)]
        );
        assert_eq!(
            stage_schedule(Schedule::GPipe, 1, 2, 2),
            vec![Forward(0), Forward(1), Backward(1), Backward(0)]
        );
    }

    #[test]
    fn gpipe_alternating_outliers() {
        // 1F1B stalls behind the alternating heavy micro-batches.
        let l = sl(&[(5.0, 10.0), (1.0, 2.0), (5.0, 10.0), (1.0, 2.0)]);
        assert_eq!(pp_critical_path(&l, 2), 51.0);
        assert_eq!(event_sim(&l, 2, Schedule::GPipe), 51.0);
        assert_eq!(event_sim_1f1b(&l, 2), 62.0);
    }

    #[test]
    fn dp_max() {
        assert_eq!(dp_step_latency(&[10.0, 12.0, 9.0]), 12.0);
        assert_eq!(dp_step_latency(&[7.0]), 7.0);
    }

    #[test]
    fn degenerate_hierarchy_composition() {
        // cp = 1 still cuts the document into two chunks: [0, 4096) over 4096
        // keys and [4096, 8192) over 8192 keys.
        let p = CostProfile::default();
        let cfg = ParallelismConfig {
            cp: 1,
            pp: 1,
            ..ParallelismConfig::default()
        };
        let m = mb(&[8192]);
        let (s, _) = microbatch_stage_latency(&m, &cfg, ShardingPolicy::PerSequence, &p).unwrap();
        let top = p.throughput(4096);
        let attn = p.op_scale * (4096.0 * 4096.0 + 4096.0 * 8192.0) / top;
        let expect = attn + p.linear_coeff * 8192.0 + p.linear_const;
        assert!((s.forward - expect).abs() <= 1e-12 * expect);
        assert_eq!(s.backward, p.backward_ratio * s.forward);
        // linear part agrees with the pair model, attention is 3/4 of it
        let pair_model = microbatch_latency(&m, &p);
        assert!(s.forward < pair_model);
    }

    #[test]
    fn per_sequence_slower_on_long_document() {
        let p = CostProfile::default();
        let cfg = ParallelismConfig {
            cp: 4,
            pp: 1,
            ..ParallelismConfig::default()
        };
        let mut lengths = vec![64 * 1024];
        lengths.extend([2048; 32]);
        let m = mb(&lengths);
        let (seq, _) = microbatch_stage_latency(&m, &cfg, ShardingPolicy::PerSequence, &p).unwrap();
        let (doc, _) = microbatch_stage_latency(&m, &cfg, ShardingPolicy::PerDocument, &p).unwrap();
        assert!(seq.forward > doc.forward);
        let (ada, s) = microbatch_stage_latency(&m, &cfg, ShardingPolicy::Adaptive, &p).unwrap();
        assert_eq!(s, ShardingStrategy::PerDocument);
        assert_eq!(ada, doc);
    }

    #[test]
    fn forward_ignores_document_order() {
        let p = CostProfile::default();
        let cfg = ParallelismConfig::default();
        let a = mb(&[1000, 30000, 250, 7000]);
        let b = mb(&[30000, 7000, 1000, 250]);
        for policy in [ShardingPolicy::PerDocument, ShardingPolicy::Adaptive] {
            let (x, _) = microbatch_stage_latency(&a, &cfg, policy, &p).unwrap();
            let (y, _) = microbatch_stage_latency(&b, &cfg, policy, &p).unwrap();
            assert!((x.forward - y.forward).abs() <= 1e-12 * x.forward);
        }
    }

    #[test]
    fn step_and_speedup() {
        let p = CostProfile::default();
        let cfg = ParallelismConfig {
            dp: 2,
            pp: 2,
            cp: 2,
            ..ParallelismConfig::default()
        };
        let plan = PackingPlan {
            microbatches: vec![mb(&[4096]), mb(&[1024; 4]), mb(&[8192]), mb(&[2048, 2048])],
            ..PackingPlan::default()
        };
        let r = simulate_step(&plan, &cfg, ShardingPolicy::Adaptive, &p).unwrap();
        assert_eq!(r.replica_critical_paths.len(), 2);
        assert_eq!(
            r.dp_step_latency,
            r.replica_critical_paths[0].max(r.replica_critical_paths[1])
        );
        assert_eq!(
            r.replica_critical_paths[1],
            pp_critical_path(&r.per_microbatch_latency[2..], 2)
        );
        assert_eq!(r.tokens, 4096 + 4096 + 8192 + 4096);
        assert_eq!(simulated_speedup(core::slice::from_ref(&r), core::slice::from_ref(&r)).unwrap(), 1.0);
        let half = StepReport {
            dp_step_latency: r.dp_step_latency / 2.0,
            ..r.clone()
        };
        assert_eq!(simulated_speedup(core::slice::from_ref(&r), &[half]).unwrap(), 2.0);

        let odd = PackingPlan {
            microbatches: vec![mb(&[8]); 3],
            ..PackingPlan::default()
        };
        assert!(simulate_step(&odd, &cfg, ShardingPolicy::Adaptive, &p).is_err());
    }
}
