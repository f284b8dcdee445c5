//! Operational side of the simulator: synthetic document streams, trace
//! ingestion, TOML configuration, experiment orchestration and report files.
//! The algorithms live in [`packsim_core`].

pub mod config;
mod error;
pub mod experiment;
pub mod report;
pub mod synthetic;
pub mod trace;

pub use config::{ExperimentConfig, InputSpec, PackingConfig, PackingStrategy};
pub use error::{HarnessError, Result};
pub use experiment::{
    compare, run_experiment, run_on_stream, Audit, Comparison, ExperimentOutput, Summary,
};
pub use report::emit_report;
pub use synthetic::{generate_synthetic_stream, SyntheticSpec};
pub use trace::{ingest_trace, Trace};
