//! TOML experiment configuration.
//!
//! ```toml
//! name = "wlb"
//! seed = 7
//! iterations = 64
//! sharding = "adaptive"          # per-sequence | per-document | adaptive
//!
//! [parallelism]
//! cp = 4
//! context_window = 131072
//!
//! [packing]
//! strategy = "heuristic"         # baseline | greedy | heuristic | exact
//! queues = 2
//!
//! [input]
//! kind = "synthetic"             # or kind = "trace", path = "docs.jsonl"
//! total_tokens = 67108864
//! ```
//!
//! The cost profile is either an inline `[profile]` table or a separate file
//! named by `profile_path`, relative to the config file.

use std::path::{Path, PathBuf};

use packsim_core::{CostProfile, ParallelismConfig, ShardingPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackingStrategy {
    /// Sequential fill of fixed windows with boundary truncation.
    #[default]
    Baseline,
    /// Fixed-length greedy repack of each global batch.
    Greedy,
    /// Variable-length packing with outlier delay queues.
    Heuristic,
    /// Branch-and-bound min-max packing of each batch; small traces only.
    Exact,
}

impl PackingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Greedy => "greedy",
            Self::Heuristic => "heuristic",
            Self::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackingConfig {
    pub strategy: PackingStrategy,
    /// Number of outlier queues when `thresholds` is not given.
    pub queues: usize,
    /// Explicit queue thresholds in tokens.
    pub thresholds: Option<Vec<u64>>,
    /// Variable-length bound; defaults to twice the window.
    pub l_max: Option<u64>,
}

impl PackingConfig {
    /// Explicit thresholds, or `queues` thresholds evenly spaced over
    /// `[window / 4, 3 * window / 4]` (a single queue sits at `window / 4`).
    pub fn resolved_thresholds(&self, window: u64) -> Vec<u64> {
        if let Some(t) = &self.thresholds {
            return t.clone();
        }
        let (lo, hi) = (window / 4, 3 * window / 4);
        match self.queues {
            0 => Vec::new(),
            1 => vec![lo],
            k => (0..k as u64)
                .map(|i| lo + i * (hi - lo) / (k as u64 - 1))
                .collect(),
        }
    }

    pub fn resolved_l_max(&self, window: u64) -> u64 {
        self.l_max.unwrap_or(2 * window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputSpec {
    Synthetic(SyntheticSpec),
    Trace { path: PathBuf },
}

impl Default for InputSpec {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Upper bound on loaded global batches; `None` runs the whole stream.
    pub iterations: Option<u64>,
    pub sharding: ShardingPolicy,
    pub parallelism: ParallelismConfig,
    pub profile: CostProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_path: Option<PathBuf>,
    pub packing: PackingConfig,
    pub input: InputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            iterations: None,
            sharding: ShardingPolicy::Adaptive,
            parallelism: ParallelismConfig::default(),
            profile: CostProfile::default(),
            profile_path: None,
            packing: PackingConfig::default(),
            input: InputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses, resolves `profile_path` and relative trace paths against the
    /// file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.profile_path.take() {
            let p = base.join(p);
            cfg.profile = load_profile(&p)?;
            cfg.profile_path = Some(p);
        }
        if let InputSpec::Trace { path: trace } = &mut cfg.input {
            if trace.is_relative() {
                *trace = base.join(&*trace);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.parallelism
            .validate()
            .map_err(HarnessError::core("parallelism"))?;
        self.profile
            .validate()
            .map_err(HarnessError::core("profile"))?;
        let window = self.parallelism.context_window;
        packsim_core::OutlierQueueSet::new(self.packing.resolved_thresholds(window))
            .map_err(HarnessError::core("packing thresholds"))?;
        if self.packing.resolved_l_max(window) < window {
            return Err(HarnessError::InvalidConfig(
                "packing.l_max must be at least the context window".into(),
            ));
        }
        if let InputSpec::Synthetic(spec) = &self.input {
            self.synthetic_spec(spec).validate()?;
        }
        Ok(())
    }

    /// Synthetic spec with the cap defaulted to the experiment window.
    pub fn synthetic_spec(&self, spec: &SyntheticSpec) -> SyntheticSpec {
        SyntheticSpec {
            context_window: Some(
                spec.context_window
                    .unwrap_or(self.parallelism.context_window),
            ),
            ..spec.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn load_profile(path: &Path) -> Result<CostProfile> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
        path: path.into(),
        message: e.to_string(),
    })?;
    let profile: CostProfile = toml::from_str(&text).map_err(|e| HarnessError::Config {
        path: path.into(),
        message: e.to_string(),
    })?;
    profile
        .validate()
        .map_err(HarnessError::core(format!("profile {}", path.display())))?;
    Ok(profile)
}
