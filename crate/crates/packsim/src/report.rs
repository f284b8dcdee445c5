//! Report files.
//!
//! All record files are JSON lines and carry `"schema": 1`:
//!
//! - `steps.jsonl`: one [`StepRecord`] per simulated step.
//! - `plans.jsonl`: one [`MicroBatchRecord`] per packed micro-batch
//!   (document ids, lengths and delays).
//! - `assignments.jsonl`: one [`AssignmentRecord`] per sharded micro-batch.
//! - `summary.csv`: one [`Summary`] row per experiment.
//! - `speedup.csv`: one [`Comparison`] row per compared pair.
//!
//! Floats are written with the shortest round-tripping representation, so
//! identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use packsim_core::{
    Document, MicroBatch, PackingPlan, ShardAssignment, ShardingStrategy, StageLatency, TokenRange,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::{Comparison, ExperimentOutput, Iteration, Summary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub schema: u32,
    pub experiment: String,
    pub iteration: u64,
    pub flush: bool,
    pub tokens: u64,
    pub dp_step_latency: f64,
    pub replica_critical_paths: Vec<f64>,
    pub imbalance_attention: f64,
    pub imbalance_latency: f64,
    pub strategies: Vec<ShardingStrategy>,
    pub stage_latency: Vec<StageLatency>,
}

impl StepRecord {
    pub fn new(experiment: &str, it: &Iteration) -> Self {
        let r = &it.report;
        Self {
            schema: SCHEMA_VERSION,
            experiment: experiment.into(),
            iteration: r.iteration,
            flush: it.flush,
            tokens: r.tokens,
            dp_step_latency: r.dp_step_latency,
            replica_critical_paths: r.replica_critical_paths.clone(),
            imbalance_attention: r.imbalance_attention,
            imbalance_latency: r.imbalance_latency,
            strategies: r.strategies.clone(),
            stage_latency: r.per_microbatch_latency.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: u64,
    pub length: u64,
    pub arrival_batch: u64,
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroBatchRecord {
    pub schema: u32,
    pub experiment: String,
    pub iteration: u64,
    pub microbatch: usize,
    pub flush: bool,
    pub tokens: u64,
    pub docs: Vec<DocRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub schema: u32,
    pub experiment: String,
    pub iteration: u64,
    pub microbatch: usize,
    pub strategy: ShardingStrategy,
    pub worker_tokens: Vec<u64>,
    pub workers: Vec<Vec<TokenRange>>,
}

impl AssignmentRecord {
    pub fn new(experiment: &str, iteration: u64, microbatch: usize, a: &ShardAssignment) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            experiment: experiment.into(),
            iteration,
            microbatch,
            strategy: a.strategy,
            worker_tokens: a.worker_tokens(),
            workers: a.per_worker.clone(),
        }
    }
}

pub fn plan_records(experiment: &str, plan: &PackingPlan, flush: bool) -> Vec<MicroBatchRecord> {
    plan.microbatches
        .iter()
        .enumerate()
        .map(|(j, mb)| MicroBatchRecord {
            schema: SCHEMA_VERSION,
            experiment: experiment.into(),
            iteration: plan.iteration,
            microbatch: j,
            flush,
            tokens: mb.total_length(),
            docs: mb
                .docs()
                .iter()
                .map(|d| DocRecord {
                    id: d.id,
                    length: d.length,
                    arrival_batch: d.arrival_batch,
                    delay: plan.iteration.saturating_sub(d.arrival_batch),
                })
                .collect(),
        })
        .collect()
}

/// Rebuilds plans from micro-batch records, ordered by iteration.
pub fn plans_from_records(records: &[MicroBatchRecord]) -> Vec<(PackingPlan, bool)> {
    let mut by_iter: BTreeMap<u64, (bool, BTreeMap<usize, MicroBatch>)> = BTreeMap::new();
    for r in records {
        let entry = by_iter.entry(r.iteration).or_default();
        entry.0 |= r.flush;
        entry.1.insert(
            r.microbatch,
            r.docs
                .iter()
                .map(|d| Document::new(d.id, d.length, d.arrival_batch))
                .collect(),
        );
    }
    by_iter
        .into_iter()
        .map(|(iteration, (flush, mbs))| {
            (
                PackingPlan {
                    iteration,
                    microbatches: mbs.into_values().collect(),
                    ..PackingPlan::default()
                },
                flush,
            )
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Write {
            path: path.into(),
            source,
        })
}

/// Writes one JSON object per line; an empty iterator gives an empty file.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let err = |source| HarnessError::Write {
        path: path.into(),
        source,
    };
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| err(e.into()))?;
        out.write_all(b"\n").map_err(err)?;
    }
    out.flush().map_err(err)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| HarnessError::Read {
        path: path.into(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| HarnessError::Read {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| HarnessError::Trace {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// CSV with a header row; with no rows only the header is written.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| HarnessError::Write {
        path: path.into(),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| HarnessError::Write {
        path: path.into(),
        source,
    })
}

pub const SUMMARY_HEADER: &[&str] = &[
    "name",
    "strategy",
    "sharding",
    "context_window",
    "global_batches",
    "flush_steps",
    "tokens",
    "total_latency",
    "tokens_per_second",
    "imbalance_attention",
    "imbalance_latency",
    "mean_delay",
    "max_delay",
    "delayed_fraction",
    "per_sequence_selected",
    "per_document_selected",
    "stream_docs",
    "stream_tokens",
    "truncated_docs",
    "truncated_tokens",
    "packed_tokens",
    "flushed_tokens",
    "queued_tokens",
    "carried_tokens",
    "unloaded_tokens",
    "conserved",
];

pub const COMPARISON_HEADER: &[&str] = &[
    "baseline",
    "candidate",
    "context_window",
    "baseline_tokens_per_second",
    "candidate_tokens_per_second",
    "speedup",
];

pub fn read_summary_csv(path: &Path) -> Result<Vec<Summary>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Read {
        path: path.into(),
        source: e.into(),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| HarnessError::Trace {
                path: path.into(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `steps.jsonl`, `plans.jsonl` and `summary.csv` for a set of runs.
pub fn emit_report(dir: &Path, outputs: &[&ExperimentOutput]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Write {
        path: dir.into(),
        source,
    })?;
    let steps = outputs.iter().flat_map(|o| {
        o.iterations
            .iter()
            .map(|it| StepRecord::new(&o.summary.name, it))
    });
    write_jsonl(&dir.join("steps.jsonl"), steps)?;
    let plans = outputs.iter().flat_map(|o| {
        o.iterations
            .iter()
            .flat_map(|it| plan_records(&o.summary.name, &it.plan, it.flush))
    });
    write_jsonl(&dir.join("plans.jsonl"), plans)?;
    let summaries: Vec<&Summary> = outputs.iter().map(|o| &o.summary).collect();
    write_csv(&dir.join("summary.csv"), SUMMARY_HEADER, &summaries)
}

pub fn emit_comparisons(dir: &Path, rows: &[Comparison]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Write {
        path: dir.into(),
        source,
    })?;
    write_csv(&dir.join("speedup.csv"), COMPARISON_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_records_round_trip() {
        let plan = PackingPlan {
            iteration: 3,
            microbatches: vec![
                MicroBatch::new(vec![Document::new(1, 10, 2), Document::new(2, 5, 3)]),
                MicroBatch::default(),
            ],
            ..PackingPlan::default()
        };
        let recs = plan_records("x", &plan, false);
        assert_eq!(recs[0].docs[0].delay, 1);
        assert_eq!(recs[1].tokens, 0);
        let back = plans_from_records(&recs);
        assert_eq!(back, vec![(plan, false)]);
    }

    #[test]
    fn summary_header_matches_field_order() {
        let row = Summary {
            name: "n".into(),
            strategy: "baseline".into(),
            sharding: "adaptive".into(),
            context_window: 0,
            global_batches: 0,
            flush_steps: 0,
            tokens: 0,
            total_latency: 0.0,
            tokens_per_second: 0.0,
            imbalance_attention: 1.0,
            imbalance_latency: 1.0,
            mean_delay: 0.0,
            max_delay: 0,
            delayed_fraction: 0.0,
            per_sequence_selected: 0,
            per_document_selected: 0,
            stream_docs: 0,
            stream_tokens: 0,
            truncated_docs: 0,
            truncated_tokens: 0,
            packed_tokens: 0,
            flushed_tokens: 0,
            queued_tokens: 0,
            carried_tokens: 0,
            unloaded_tokens: 0,
            conserved: true,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    }
}
