//! Packing, sharding and pipeline simulation over a document stream.
//!
//! Every strategy sees global batches of `N * window` tokens drawn from the
//! same stream. Baseline and greedy take them from the sequential loader,
//! which splits the document crossing each window boundary. The heuristic
//! packer needs whole documents, so its batches are cut at document
//! boundaries with the same token budget. In both cases the final
//! incomplete batch is not trained and shows up as `unloaded` in the audit.

use std::time::{Duration, Instant};

use log::{debug, info};
use packsim_core::packing::{IdAllocator, SequentialLoader};
use packsim_core::{
    fixed_len_greedy_pack, simulate_step, simulated_speedup, token_delay_stats, var_len_exact_pack,
    Document, HeuristicPacker, MicroBatch, OutlierQueueSet, PackingPlan, ShardingStrategy,
    StepReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InputSpec, PackingStrategy};
use crate::error::{HarnessError, Result};
use crate::synthetic::generate_synthetic_stream;
use crate::trace::{ingest_trace, Trace};

/// One simulated training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub plan: PackingPlan,
    /// End-of-stream step draining queues and carried documents.
    pub flush: bool,
    pub report: StepReport,
}

/// Where every stream token ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Audit {
    pub stream_docs: u64,
    pub stream_tokens: u64,
    pub truncated_docs: u64,
    pub truncated_tokens: u64,
    /// Trained in regular steps.
    pub packed_tokens: u64,
    /// Trained in flush steps.
    pub flushed_tokens: u64,
    /// Still in outlier queues at the end (0 after a full flush).
    pub queued_tokens: u64,
    /// Still carried over at the end (0 after a full flush).
    pub carried_tokens: u64,
    /// Left in the incomplete final global batch.
    pub unloaded_tokens: u64,
}

impl Audit {
    pub fn is_conserved(&self) -> bool {
        self.stream_tokens
            == self.packed_tokens
                + self.flushed_tokens
                + self.queued_tokens
                + self.carried_tokens
                + self.unloaded_tokens
    }
}

/// One CSV row per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub strategy: String,
    pub sharding: String,
    pub context_window: u64,
    pub global_batches: u64,
    pub flush_steps: u64,
    pub tokens: u64,
    pub total_latency: f64,
    pub tokens_per_second: f64,
    /// Mean over regular steps of max/mean attention pairs per micro-batch.
    pub imbalance_attention: f64,
    /// Mean over regular steps of the worst replica's
    /// `max latency * count / total`.
    pub imbalance_latency: f64,
    pub mean_delay: f64,
    pub max_delay: u64,
    pub delayed_fraction: f64,
    pub per_sequence_selected: u64,
    pub per_document_selected: u64,
    pub stream_docs: u64,
    pub stream_tokens: u64,
    pub truncated_docs: u64,
    pub truncated_tokens: u64,
    pub packed_tokens: u64,
    pub flushed_tokens: u64,
    pub queued_tokens: u64,
    pub carried_tokens: u64,
    pub unloaded_tokens: u64,
    pub conserved: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub iterations: Vec<Iteration>,
    pub audit: Audit,
    pub summary: Summary,
    /// Wall-clock time spent packing each loaded global batch. Kept out of
    /// every report so that reports stay reproducible.
    pub packing_time: Vec<Duration>,
}

/// Loads the configured stream, truncated at the window.
pub fn load_stream(config: &ExperimentConfig) -> Result<Trace> {
    let window = config.parallelism.context_window;
    match &config.input {
        InputSpec::Synthetic(spec) => {
            let docs = generate_synthetic_stream(&config.synthetic_spec(spec), config.seed)?;
            Ok(Trace {
                docs,
                ..Trace::default()
            })
        }
        InputSpec::Trace { path } => ingest_trace(path, window),
    }
}

/// Groups whole documents into batches of at most `budget` tokens. A batch
/// is complete once the next document would overflow it; the trailing
/// incomplete batch is returned separately.
pub fn whole_document_batches(
    stream: &[Document],
    budget: u64,
) -> (Vec<Vec<Document>>, Vec<Document>) {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for &doc in stream {
        if tokens + doc.length > budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        tokens += doc.length;
        current.push(doc);
    }
    (batches, current)
}

struct Packed {
    plans: Vec<(PackingPlan, bool)>,
    unloaded_tokens: u64,
    queued_tokens: u64,
    carried_tokens: u64,
    packing_time: Vec<Duration>,
}

fn pack_stream(config: &ExperimentConfig, stream: &[Document]) -> Result<Packed> {
    let par = &config.parallelism;
    let n = par.microbatches_per_step as usize;
    let window = par.context_window;
    let limit = config.iterations.unwrap_or(u64::MAX);
    let mut plans = Vec::new();
    let mut packing_time = Vec::new();

    match config.packing.strategy {
        PackingStrategy::Baseline | PackingStrategy::Greedy => {
            let mut loader =
                SequentialLoader::new(stream.iter().copied(), window, IdAllocator::after(stream));
            let mut index = 0;
            while index < limit {
                let Some(batch) = loader.next_global_batch(n, index) else {
                    break;
                };
                let start = Instant::now();
                let microbatches = if config.packing.strategy == PackingStrategy::Greedy {
                    let docs: Vec<Document> =
                        batch.into_iter().flat_map(MicroBatch::into_docs).collect();
                    fixed_len_greedy_pack(&docs, n, window, loader.ids_mut())
                        .map_err(HarnessError::core(format!("greedy packing batch {index}")))?
                        .microbatches
                } else {
                    batch
                };
                packing_time.push(start.elapsed());
                plans.push((
                    PackingPlan {
                        iteration: index,
                        microbatches,
                        ..PackingPlan::default()
                    },
                    false,
                ));
                index += 1;
            }
            let unloaded_tokens = loader.remainder().iter().map(|d| d.length).sum();
            Ok(Packed {
                plans,
                unloaded_tokens,
                queued_tokens: 0,
                carried_tokens: 0,
                packing_time,
            })
        }
        PackingStrategy::Exact => {
            let l_max = config.packing.resolved_l_max(window);
            let (batches, tail) = whole_document_batches(stream, n as u64 * window);
            let mut unloaded_tokens: u64 = tail.iter().map(|d| d.length).sum();
            for (index, batch) in batches.into_iter().enumerate() {
                let index = index as u64;
                if index >= limit {
                    unloaded_tokens += batch.iter().map(|d| d.length).sum::<u64>();
                    continue;
                }
                let start = Instant::now();
                let exact = var_len_exact_pack(&batch, n, l_max, &config.profile)
                    .map_err(HarnessError::core(format!("exact packing batch {index}")))?;
                packing_time.push(start.elapsed());
                let microbatches = exact
                    .plan
                    .microbatches
                    .into_iter()
                    .map(|mb| {
                        mb.into_docs()
                            .into_iter()
                            .map(|d| Document {
                                arrival_batch: index,
                                ..d
                            })
                            .collect()
                    })
                    .collect();
                plans.push((
                    PackingPlan {
                        iteration: index,
                        microbatches,
                        ..PackingPlan::default()
                    },
                    false,
                ));
            }
            Ok(Packed {
                plans,
                unloaded_tokens,
                queued_tokens: 0,
                carried_tokens: 0,
                packing_time,
            })
        }
        PackingStrategy::Heuristic => {
            let thresholds = config.packing.resolved_thresholds(window);
            let queues =
                OutlierQueueSet::new(thresholds).map_err(HarnessError::core("outlier queues"))?;
            let l_max = config.packing.resolved_l_max(window);
            let mut packer = HeuristicPacker::new(queues, n, l_max, config.profile.clone())
                .map_err(HarnessError::core("heuristic packer"))?;
            let (batches, tail) = whole_document_batches(stream, n as u64 * window);
            let mut unloaded_tokens: u64 = tail.iter().map(|d| d.length).sum();
            for (index, batch) in batches.into_iter().enumerate() {
                let index = index as u64;
                if index >= limit {
                    unloaded_tokens += batch.iter().map(|d| d.length).sum::<u64>();
                    continue;
                }
                let batch = batch
                    .into_iter()
                    .map(|d| Document {
                        arrival_batch: index,
                        ..d
                    })
                    .collect();
                let start = Instant::now();
                let plan = packer.step(batch).map_err(HarnessError::core(format!(
                    "heuristic packing batch {index}"
                )))?;
                packing_time.push(start.elapsed());
                plans.push((plan, false));
            }
            while let Some(plan) = packer.flush() {
                plans.push((plan, true));
            }
            Ok(Packed {
                plans,
                unloaded_tokens,
                queued_tokens: packer.queues().tokens(),
                carried_tokens: packer.carried().iter().map(|d| d.length).sum(),
                packing_time,
            })
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let trace = load_stream(config)?;
    run_on_stream(config, &trace)
}

/// Runs `config` on an already loaded stream; the config's input section is
/// ignored.
pub fn run_on_stream(config: &ExperimentConfig, trace: &Trace) -> Result<ExperimentOutput> {
    let packed = pack_stream(config, &trace.docs)?;
    if let Some(max) = packed.packing_time.iter().max() {
        let total: Duration = packed.packing_time.iter().sum();
        debug!(
            "{}: packing took {:?} total, {:?} worst batch over {} batches",
            config.name,
            total,
            max,
            packed.packing_time.len()
        );
    }

    let mut iterations = Vec::with_capacity(packed.plans.len());
    for (plan, flush) in packed.plans {
        let report = simulate_step(&plan, &config.parallelism, config.sharding, &config.profile)
            .map_err(HarnessError::core(format!(
                "{}: simulating step {}",
                config.name, plan.iteration
            )))?;
        iterations.push(Iteration {
            plan,
            flush,
            report,
        });
    }

    let tokens_in = |flush: bool| -> u64 {
        iterations
            .iter()
            .filter(|it| it.flush == flush)
            .map(|it| it.plan.packed_tokens())
            .sum()
    };
    let audit = Audit {
        stream_docs: trace.docs.len() as u64,
        stream_tokens: trace.docs.iter().map(|d| d.length).sum(),
        truncated_docs: trace.truncated,
        truncated_tokens: trace.truncated_tokens,
        packed_tokens: tokens_in(false),
        flushed_tokens: tokens_in(true),
        queued_tokens: packed.queued_tokens,
        carried_tokens: packed.carried_tokens,
        unloaded_tokens: packed.unloaded_tokens,
    };
    let summary = summarize(config, &iterations, &audit);
    info!(
        "{}: {} steps, imbalance {:.3}, {:.0} tokens/s",
        config.name,
        iterations.len(),
        summary.imbalance_attention,
        summary.tokens_per_second
    );
    Ok(ExperimentOutput {
        config: config.clone(),
        iterations,
        audit,
        summary,
        packing_time: packed.packing_time,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0u64), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

fn summarize(config: &ExperimentConfig, iterations: &[Iteration], audit: &Audit) -> Summary {
    let regular = || iterations.iter().filter(|it| !it.flush);
    let delays = token_delay_stats(iterations.iter().map(|it| &it.plan));
    let strategies = iterations.iter().flat_map(|it| {
        it.plan
            .microbatches
            .iter()
            .zip(&it.report.strategies)
            .filter(|(mb, _)| !mb.is_empty())
            .map(|(_, s)| *s)
    });
    let (mut per_sequence_selected, mut per_document_selected) = (0, 0);
    for s in strategies {
        match s {
            ShardingStrategy::PerSequence => per_sequence_selected += 1,
            ShardingStrategy::PerDocument => per_document_selected += 1,
        }
    }
    let total_latency: f64 = iterations.iter().map(|it| it.report.dp_step_latency).sum();
    let tokens: u64 = iterations.iter().map(|it| it.report.tokens).sum();
    Summary {
        name: config.name.clone(),
        strategy: config.packing.strategy.as_str().into(),
        sharding: policy_name(config.sharding).into(),
        context_window: config.parallelism.context_window,
        global_batches: regular().count() as u64,
        flush_steps: iterations.iter().filter(|it| it.flush).count() as u64,
        tokens,
        total_latency,
        tokens_per_second: if total_latency > 0.0 {
            tokens as f64 / total_latency
        } else {
            0.0
        },
        imbalance_attention: mean(regular().map(|it| it.report.imbalance_attention)),
        imbalance_latency: mean(regular().map(|it| it.report.imbalance_latency)),
        mean_delay: delays.mean_delay,
        max_delay: delays.max_delay,
        delayed_fraction: delays.delayed_fraction,
        per_sequence_selected,
        per_document_selected,
        stream_docs: audit.stream_docs,
        stream_tokens: audit.stream_tokens,
        truncated_docs: audit.truncated_docs,
        truncated_tokens: audit.truncated_tokens,
        packed_tokens: audit.packed_tokens,
        flushed_tokens: audit.flushed_tokens,
        queued_tokens: audit.queued_tokens,
        carried_tokens: audit.carried_tokens,
        unloaded_tokens: audit.unloaded_tokens,
        conserved: audit.is_conserved(),
    }
}

pub fn policy_name(policy: packsim_core::ShardingPolicy) -> &'static str {
    match policy {
        packsim_core::ShardingPolicy::PerSequence => "per-sequence",
        packsim_core::ShardingPolicy::PerDocument => "per-document",
        packsim_core::ShardingPolicy::Adaptive => "adaptive",
    }
}

/// Speedup of `candidate` over `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    pub context_window: u64,
    pub baseline_tokens_per_second: f64,
    pub candidate_tokens_per_second: f64,
    pub speedup: f64,
}

pub fn compare(baseline: &ExperimentOutput, candidate: &ExperimentOutput) -> Result<Comparison> {
    let reports = |o: &ExperimentOutput| {
        o.iterations
            .iter()
            .map(|it| it.report.clone())
            .collect::<Vec<_>>()
    };
    let speedup = simulated_speedup(&reports(baseline), &reports(candidate))
        .map_err(HarnessError::core("speedup"))?;
    Ok(Comparison {
        baseline: baseline.summary.name.clone(),
        candidate: candidate.summary.name.clone(),
        context_window: candidate.summary.context_window,
        baseline_tokens_per_second: baseline.summary.tokens_per_second,
        candidate_tokens_per_second: candidate.summary.tokens_per_second,
        speedup,
    })
}
