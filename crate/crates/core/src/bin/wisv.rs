use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use wisv_core::config::ExperimentConfig;
use wisv_core::pipeline;

/// Wireless speculative decoding simulator and experiment runner.
#[derive(Debug, Parser)]
#[command(name = "wisv", version)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Does not affect outputs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect greedy decoding traces.
    Trace,
    /// Build the CSI-aware training set from traces.
    Relabel,
    /// Train the decision head.
    Train,
    /// Run the evaluation grid and tau sweep.
    Eval,
    /// Compare CSI-aware and no-CSI heads.
    Ablate,
    /// Run every stage in order.
    All,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    kind: &'a str,
}

fn print<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    match cli.command {
        Command::Trace => {
            let r = pipeline::cmd_trace(&cfg, &out)?;
            eprintln!(
                "{} episodes, {} mismatches, critical fraction {:.4}",
                r.episodes, r.mismatches, r.critical_fraction
            );
            print(&r)
        }
        Command::Relabel => print(&pipeline::cmd_relabel(&cfg, &out)?),
        Command::Train => {
            let meta = pipeline::cmd_train(&cfg, &out)?;
            for w in &meta.warnings {
                eprintln!("warning: {w}");
            }
            print(&meta)
        }
        Command::Eval => {
            let r = pipeline::cmd_eval(&cfg, &out)?;
            eprintln!("{} grid points written to {}", r.points.len(), out.join("eval").display());
            Ok(())
        }
        Command::Ablate => print(&pipeline::cmd_ablate(&cfg, &out)?),
        Command::All => {
            let r = pipeline::cmd_all(&cfg, &out)?;
            for w in &r.train.warnings {
                eprintln!("warning: {w}");
            }
            print(&r)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<wisv_core::Error>()
                .map_or("internal", wisv_core::Error::kind);
            let msg = format!("{err:#}");
            let line = serde_json::to_string(&ErrorLine { error: &msg, kind })
                .unwrap_or_else(|_| format!("{{\"error\":{msg:?}}}"));
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
