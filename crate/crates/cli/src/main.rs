use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frilab_core::harness::{
    env_threads, sweep, verify_algorithm, with_threads, write_error, write_output, ErrorRecord, ExperimentConfig,
    Kind, SweepConfig, EXPERIMENT_SCHEMA, SWEEP_SCHEMA,
};
use frilab_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "frilab", version, about = "Finitary random interlacements laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment (or sweep) config, JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; default the config's `out`, else out/<id>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Capacities of balls, walk ranges or point sets.
    Capacity(Common),
    /// Normalized trace capacity ε_d.
    Epsilon(Common),
    /// Window samples of the trajectory cloud and local times.
    FriSample(Common),
    /// Percolation threshold estimate by doubling and bisection.
    Threshold(Common),
    /// Layer exploration and the W_k recursion.
    Explore(Common),
    /// The coarse-grained exploration Algorithm.
    Algorithm(Common),
    /// Hit chains.
    Chain(Common),
    /// Replay an algorithm run's round records against its status maps.
    Verify(Common),
    /// Cross product of a parameter grid over a template config.
    Sweep(Common),
    /// Print the experiment or sweep config schema.
    Schema {
        #[arg(long)]
        sweep: bool,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| Path::new("out").join(cfg.id()))
}

fn run_kind(kind: Kind, c: &Common) -> Result<serde_json::Value> {
    let cfg = load(c)?;
    if cfg.kind != kind {
        return Err(Error::Validation(format!("config is a {} experiment, not {}", cfg.kind.label(), kind.label())));
    }
    let dir = out_dir(c, &cfg);
    let res = with_threads(env_threads()?, || frilab_core::harness::run_experiment(&cfg))?;
    match res {
        Ok(out) => {
            write_output(&dir, &cfg, 0, &out)?;
            let summary = json!({
                "experiment": cfg.id(),
                "out": dir,
                "rows": out.rows.len(),
                "files": out.files.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
                "wall_time_s": out.wall_time,
            });
            Ok(summary)
        }
        Err(e) => {
            let _ = write_error(&dir, &e);
            Err(e)
        }
    }
}

fn run(cmd: &Cmd) -> Result<serde_json::Value> {
    let kind = match cmd {
        Cmd::Capacity(c) => Some((Kind::Capacity, c)),
        Cmd::Epsilon(c) => Some((Kind::Epsilon, c)),
        Cmd::FriSample(c) => Some((Kind::FriSample, c)),
        Cmd::Threshold(c) => Some((Kind::Threshold, c)),
        Cmd::Explore(c) => Some((Kind::Explore, c)),
        Cmd::Algorithm(c) => Some((Kind::Algorithm, c)),
        Cmd::Chain(c) => Some((Kind::Chain, c)),
        _ => None,
    };
    if let Some((k, c)) = kind {
        return run_kind(k, c);
    }
    match cmd {
        Cmd::Verify(c) => {
            let cfg = load(c)?;
            let dir = out_dir(c, &cfg);
            let rep = verify_algorithm(&cfg, &dir)?;
            Ok(json!({"verified": true, "replicas": rep.replicas, "rounds": rep.rounds}))
        }
        Cmd::Sweep(c) => {
            let mut sw = SweepConfig::load(&c.config)?;
            if let Some(s) = c.seed {
                sw.template["seed"] = json!(s);
            }
            let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("out/sweep"));
            let rep = with_threads(env_threads()?, || sweep(&sw, &dir))??;
            let code = rep.exit_code();
            let summary = json!({
                "out": dir,
                "cells": rep.cells.len(),
                "failed": rep.failed().map(|c| c.cell).collect::<Vec<_>>(),
            });
            if code != 0 {
                println!("{summary}");
                return Err(match code {
                    3 => Error::Budget("some sweep cells ran out of budget".into()),
                    4 => Error::Invariant("some sweep cells failed an invariant".into()),
                    _ => Error::Validation("some sweep cells failed".into()),
                });
            }
            Ok(summary)
        }
        Cmd::Schema { sweep } => Ok(serde_json::from_str(if *sweep { SWEEP_SCHEMA } else { EXPERIMENT_SCHEMA })?),
        _ => unreachable!("kind subcommands handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let rec = ErrorRecord::from(&e);
            eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
            ExitCode::from(rec.code as u8)
        }
    }
}
