use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use packsim::config::InputSpec;
use packsim::experiment::policy_name;
use packsim::report::{
    emit_comparisons, plan_records, plans_from_records, read_jsonl, write_jsonl, AssignmentRecord,
    MicroBatchRecord,
};
use packsim::{
    compare, emit_report, generate_synthetic_stream, run_experiment, ExperimentConfig,
    HarnessError, Result,
};
use packsim_core::pipeline::FILLER_DOC_ID;
use packsim_core::sharding::{pad_to_multiple, shard};

/// Workload-balancing simulator for 4D-parallel LLM training.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Relative paths that do not exist are also
    /// looked up in $PACKSIM_CONFIG_DIR.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(
        long,
        env = "PACKSIM_CONFIG_DIR",
        global = true,
        hide_env_values = true
    )]
    config_dir: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// -v info, -vv debug, -vvv trace.
    #[arg(short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured synthetic stream to `stream.jsonl`.
    Generate,
    /// Pack the configured stream and write `plans.jsonl`.
    Pack,
    /// Shard every micro-batch of a plans file and write `assignments.jsonl`.
    Shard {
        /// Plans written by `pack` or `simulate`.
        #[arg(long)]
        plans: PathBuf,
    },
    /// Pack, shard and simulate; write steps, plans and summary.
    Simulate,
    /// Simulate a baseline and one or more candidates and write speedups.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        candidate: Vec<PathBuf>,
    },
}

impl Common {
    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.config_dir {
            Some(dir) if path.is_relative() && !path.exists() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn load(&self, path: Option<&Path>) -> Result<ExperimentConfig> {
        let mut cfg = match path {
            Some(p) => ExperimentConfig::load(&self.resolve(p))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn config(&self) -> Result<ExperimentConfig> {
        self.load(self.config.as_deref())
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|source| HarnessError::Write {
            path: self.out_dir.clone(),
            source,
        })?;
        Ok(self.out_dir.join(name))
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Generate => {
            let cfg = common.config()?;
            let InputSpec::Synthetic(spec) = &cfg.input else {
                return Err(HarnessError::InvalidConfig(
                    "generate needs a synthetic input".into(),
                ));
            };
            let docs = generate_synthetic_stream(&cfg.synthetic_spec(spec), cfg.seed)?;
            let path = common.out("stream.jsonl")?;
            packsim::trace::write_trace(&path, &docs)?;
            info!("wrote {} documents to {}", docs.len(), path.display());
        }
        Command::Pack => {
            let cfg = common.config()?;
            let out = run_experiment(&cfg)?;
            let records = out
                .iterations
                .iter()
                .flat_map(|it| plan_records(&cfg.name, &it.plan, it.flush));
            let path = common.out("plans.jsonl")?;
            write_jsonl(&path, records)?;
            info!("wrote {} steps to {}", out.iterations.len(), path.display());
        }
        Command::Shard { plans } => {
            let cfg = common.config()?;
            let records: Vec<MicroBatchRecord> = read_jsonl(&plans)?;
            let divisor = cfg.parallelism.shard_divisor();
            let mut out = Vec::new();
            for (plan, _) in plans_from_records(&records) {
                for (j, mb) in plan.microbatches.iter().enumerate() {
                    let padded = pad_to_multiple(mb, divisor, FILLER_DOC_ID);
                    let a = shard(&padded, cfg.parallelism.cp, cfg.sharding, &cfg.profile)
                        .map_err(HarnessError::core(format!(
                            "sharding step {} micro-batch {j}",
                            plan.iteration
                        )))?;
                    out.push(AssignmentRecord::new(&cfg.name, plan.iteration, j, &a));
                }
            }
            let path = common.out("assignments.jsonl")?;
            write_jsonl(&path, &out)?;
            info!(
                "wrote {} assignments ({}) to {}",
                out.len(),
                policy_name(cfg.sharding),
                path.display()
            );
        }
        Command::Simulate => {
            let cfg = common.config()?;
            let out = run_experiment(&cfg)?;
            emit_report(&common.out_dir, &[&out])?;
            if !out.audit.is_conserved() {
                error!("token audit does not balance: {:?}", out.audit);
            }
        }
        Command::Compare {
            baseline,
            candidate,
        } => {
            let base_cfg = common.load(Some(&baseline))?;
            let base = run_experiment(&base_cfg)?;
            let mut outputs = vec![base];
            for path in &candidate {
                outputs.push(run_experiment(&common.load(Some(path))?)?);
            }
            let rows = outputs[1..]
                .iter()
                .map(|c| compare(&outputs[0], c))
                .collect::<Result<Vec<_>>>()?;
            for r in &rows {
                info!("{} vs {}: {:.4}x", r.candidate, r.baseline, r.speedup);
            }
            emit_report(&common.out_dir, &outputs.iter().collect::<Vec<_>>())?;
            emit_comparisons(&common.out_dir, &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
