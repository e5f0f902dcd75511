//! `sbm <experiment> --config <path> [--seed N] [--workers K] [--out DIR]`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sbm_core::harness::{self, Experiment, ScenarioConfig};
use sbm_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "sbm", version, about = "Subordinate Brownian motion experiments")]
struct Cli {
    /// identities, scaling, freekernel, dirichlet, survival, green or report
    experiment: String,
    /// TOML scenario file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config value, then $SBM_WORKERS, then 1
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for results.csv and summary.json
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<i32> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = ScenarioConfig::from_path(&cli.config)?;
    if let Some(file_exp) = cfg.experiment {
        if file_exp != experiment {
            return Err(Error::Config(format!(
                "config is for '{file_exp}', command asked for '{experiment}'"
            )));
        }
    }
    cfg.experiment = Some(experiment);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let env = std::env::var(harness::WORKERS_ENV).ok();
    let workers = harness::resolve_workers(cli.workers, cfg.workers, env.as_deref())?;
    let summary = harness::run_scenario(&cfg, workers)?;
    for d in &summary.diagnostics {
        eprintln!("sbm: {d}");
    }
    match &summary.fit {
        Some(fit) => println!(
            "{}: {} rows, c_lower={:.4} c_upper={:.4} c={:.4}, {} in {:.2}s",
            summary.experiment,
            summary.rows,
            fit.c_lower,
            fit.c_upper,
            fit.c,
            if summary.pass { "pass" } else { "FAIL" },
            summary.runtime_seconds
        ),
        None => println!(
            "{}: {} rows, {} in {:.2}s",
            summary.experiment,
            summary.rows,
            if summary.pass { "pass" } else { "FAIL" },
            summary.runtime_seconds
        ),
    }
    Ok(summary.status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let status = run(cli).unwrap_or_else(|e| {
        eprintln!("sbm: {e}");
        harness::error_status(&e)
    });
    ExitCode::from(status as u8)
}
