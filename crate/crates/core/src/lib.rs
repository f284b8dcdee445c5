//! Workload-balancing decision stack for 4D-parallel (TP/CP/PP/DP) LLM
//! training, driven by an analytic cost model.
//!
//! The crate is `no_std` (it needs `alloc`) and purely algorithmic:
//!
//! - [`workload`]: documents, micro-batches, the calibratable [`CostProfile`]
//!   and every workload/latency estimate built on it.
//! - [`packing`]: PP-level batch formation. Sequential baseline, fixed-length
//!   greedy, exact branch-and-bound oracles and the variable-length packer
//!   with multi-level outlier queues.
//! - [`sharding`]: CP-level per-sequence and per-document sharding plus the
//!   runtime adaptive selection between them.
//! - [`pipeline`]: composition of CP, PP and DP latencies, the analytic PP
//!   critical path and an event-driven pipeline simulator to validate it.
//!
//! IO, synthetic data, configuration files and the CLI live in the `packsim`
//! crate.

#![no_std]

extern crate alloc;

mod error;
pub mod packing;
pub mod pipeline;
pub mod sharding;
pub mod workload;

pub use error::{Error, Result};
pub use packing::{
    baseline_sequential_pack, fixed_len_exact_pack, fixed_len_greedy_pack,
    imbalance_degree_attention, imbalance_degree_latency, token_delay_stats, var_len_exact_pack,
    HeuristicPacker, OutlierQueueSet, PackingPlan, TokenDelayStats,
};
pub use pipeline::{
    dp_step_latency, event_sim, event_sim_1f1b, microbatch_stage_latency, pp_critical_path,
    simulate_step, simulated_speedup, Schedule, StageLatency, StepReport,
};
pub use sharding::{
    adaptive_select, per_document_shard, per_sequence_shard, worker_attention_latency,
    ShardAssignment, ShardingPolicy, ShardingStrategy,
};
pub use workload::{
    attention_kernel_latency, attention_workload, attention_workload_latency,
    linear_workload_latency, microbatch_latency, range_attention_workload, CostProfile, Document,
    MicroBatch, ParallelismConfig, TokenRange,
};
