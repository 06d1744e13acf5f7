//! Command-line front end: run scenarios, execute the chart-consistency
//! experiment, and benchmark policy throughput.
//!
//! Exit codes: 0 success, 2 scenario/schema error, 3 simulation abort,
//! 4 assertion failure.

use clap::{Args, Parser, Subcommand};
use pbds::scenario::{
    bench, consistency_test, run_scenario, write_trajectory_csv, BuiltScenario, Engine, Scenario,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_SCHEMA: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Parser)]
#[command(name = "pbds", about = "Manifold motion policies from fused Riemannian tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Policy engine to use instead of the scenario's.
    #[arg(long)]
    engine: Option<Engine>,
    /// Integrator step size override.
    #[arg(long)]
    dt: Option<f64>,
    /// Integration horizon override.
    #[arg(long)]
    horizon: Option<f64>,
    /// Replaces the scenario's randomized-start seeds with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write trajectory CSVs plus a JSON report.
    Run {
        scenario: PathBuf,
        /// Output directory for report.json and per-run CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the scenario under fixed-south, fixed-north, and hemisphere chart
    /// schemes and report pairwise trajectory deviations.
    Consistency {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Time repeated policy evaluations at randomized states.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &Path, overrides: &Overrides) -> Result<BuiltScenario, String> {
    let mut scenario = Scenario::from_file(path).map_err(|e| e.to_string())?;
    if let Some(dt) = overrides.dt {
        scenario.integrator.dt = dt;
    }
    if let Some(h) = overrides.horizon {
        scenario.integrator.horizon = h;
    }
    if let Some(engine) = overrides.engine {
        scenario.engine = engine;
    }
    if let Some(seed) = overrides.seed {
        scenario.seeds = vec![seed];
    }
    scenario.build().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            overrides,
        } => {
            let built = match load(&scenario, &overrides) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_SCHEMA);
                }
            };
            let outcome = match run_scenario(&built) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ABORT);
                }
            };
            if let Err(e) = std::fs::create_dir_all(&out) {
                eprintln!("error: cannot create {}: {e}", out.display());
                return ExitCode::from(EXIT_ABORT);
            }
            for (i, traj) in outcome.trajectories.iter().enumerate() {
                let path = out.join(format!("{}_run{i}.csv", built.name));
                if let Err(e) = write_trajectory_csv(&path, traj) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(EXIT_ABORT);
                }
            }
            let report_path = out.join("report.json");
            let json = serde_json::to_string_pretty(&outcome.report).expect("serializable report");
            if let Err(e) = std::fs::write(&report_path, &json) {
                eprintln!("error: cannot write {}: {e}", report_path.display());
                return ExitCode::from(EXIT_ABORT);
            }
            println!("{json}");
            if !outcome.aborts.is_empty() {
                for abort in &outcome.aborts {
                    eprintln!("simulation abort: {abort}");
                }
                return ExitCode::from(EXIT_ABORT);
            }
            if !outcome.assertion_failures.is_empty() {
                for failure in &outcome.assertion_failures {
                    eprintln!("assertion failed: {failure}");
                }
                return ExitCode::from(EXIT_ASSERT);
            }
            ExitCode::SUCCESS
        }
        Command::Consistency {
            scenario,
            overrides,
        } => {
            let built = match load(&scenario, &overrides) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_SCHEMA);
                }
            };
            let engine = overrides.engine.unwrap_or(built.engine);
            let report = match consistency_test(&built, engine) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ABORT);
                }
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializable report")
            );
            if !report.passed {
                eprintln!(
                    "assertion failed: max pairwise deviation {:.3e} exceeds bound {:.3e}",
                    report.max_pairwise,
                    report.asserted_bound.unwrap_or(f64::NAN)
                );
                return ExitCode::from(EXIT_ASSERT);
            }
            ExitCode::SUCCESS
        }
        Command::Bench {
            scenario,
            iters,
            overrides,
        } => {
            let built = match load(&scenario, &overrides) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_SCHEMA);
                }
            };
            let seed = overrides.seed.unwrap_or(0);
            match bench(&built, iters, seed) {
                Ok(report) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&report).expect("serializable report")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_ABORT)
                }
            }
        }
    }
}
