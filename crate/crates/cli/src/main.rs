use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate_core::scenario::{load_scenario, run_scenario, ScenarioError, ScenarioReport};

#[derive(Parser)]
#[command(name = "crate-sim", version, about = "Runs cross-rollup atomicity scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario paths, or names looked up in the scenario directory.
    #[arg(required = true)]
    scenarios: Vec<String>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the NDJSON trace here. With several scenarios this is a
    /// directory receiving `<name>.ndjson` files.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scenarios to run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print per-instance metrics as JSON.
    #[arg(long)]
    metrics: bool,
    /// Where bare scenario names are looked up.
    #[arg(long, env = "CRATE_SCENARIO_DIR")]
    scenario_dir: Option<PathBuf>,
}

fn resolve(name: &str, dir: Option<&Path>) -> PathBuf {
    let direct = PathBuf::from(name);
    if direct.exists() {
        return direct;
    }
    match dir {
        Some(d) => {
            let p = d.join(name);
            if p.exists() || p.extension().is_some() {
                p
            } else {
                d.join(format!("{name}.toml"))
            }
        }
        None => direct,
    }
}

fn run_one(path: &Path, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    let sc = load_scenario(path)?;
    run_scenario(&sc, seed)
}

fn summary(rep: &ScenarioReport) -> String {
    let outcomes: Vec<&str> = rep.batches.iter().map(|b| b.two_pc.outcome.name()).collect();
    format!("{} (seed {}): {}", rep.name, rep.seed, outcomes.join(", "))
}

fn write_trace(args: &RunArgs, rep: &ScenarioReport) -> std::io::Result<()> {
    let Some(target) = &args.trace else {
        return Ok(());
    };
    let path = if args.scenarios.len() > 1 {
        std::fs::create_dir_all(target)?;
        target.join(format!("{}.ndjson", rep.name))
    } else {
        target.clone()
    };
    std::fs::write(path, rep.trace.to_ndjson())
}

fn run(args: RunArgs) -> ExitCode {
    let paths: Vec<PathBuf> = args
        .scenarios
        .iter()
        .map(|s| resolve(s, args.scenario_dir.as_deref()))
        .collect();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let results: Vec<_> = pool.install(|| paths.par_iter().map(|p| run_one(p, args.seed)).collect());
    let mut code = 0u8;
    for res in results {
        match res {
            Err(e) => {
                eprintln!("error: {e}");
                code = 2;
            }
            Ok(rep) => {
                if let Err(e) = write_trace(&args, &rep) {
                    eprintln!("error: writing trace for {}: {e}", rep.name);
                    code = 2;
                }
                if rep.passed() {
                    println!("PASS {}", summary(&rep));
                } else {
                    println!("FAIL {}: {}", summary(&rep), rep.failures[0]);
                    code = code.max(1);
                }
                if args.metrics {
                    match serde_json::to_string(&rep.metrics) {
                        Ok(m) => println!("{m}"),
                        Err(e) => eprintln!("error: metrics: {e}"),
                    }
                }
            }
        }
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
    }
}
