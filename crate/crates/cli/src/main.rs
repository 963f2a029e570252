use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use radolearn::experiment::{
    emit_skipped, emit_tables, emit_traces, run_experiment, ExperimentConfig, RunOptions,
};
use radolearn::Error;

/// Run a distributed rado-learning experiment grid and write result tables.
#[derive(Debug, Parser)]
#[command(name = "radolearn", version)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write every protocol message to `protocol_trace.jsonl`.
    #[arg(long)]
    trace_protocol: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Err(e) = config.validate() {
        error!("{e}");
        return ExitCode::from(1);
    }
    let out_dir = args
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&config.domain));

    match run(&config, &out_dir, args.threads, args.trace_protocol) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

fn run(
    config: &ExperimentConfig,
    out_dir: &std::path::Path,
    threads: Option<usize>,
    trace: bool,
) -> radolearn::Result<()> {
    let options = RunOptions {
        threads,
        trace_protocol: trace,
    };
    let output = run_experiment(config, &options)?;
    for path in emit_tables(&output.records, out_dir)? {
        info!("wrote {}", path.display());
    }
    if !output.skipped.is_empty() {
        info!(
            "wrote {}",
            emit_skipped(&output.skipped, out_dir)?.display()
        );
    }
    if trace {
        let path = out_dir.join("protocol_trace.jsonl");
        emit_traces(&output.traces, &path)?;
        info!("wrote {}", path.display());
    }
    Ok(())
}
