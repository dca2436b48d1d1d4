use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};

use owncash::scenario::{run_scenario, scenario_names, Overrides, ScenarioReport};

/// Run ownership-transfer e-cash scenarios on a simulated network.
#[derive(Parser, Debug)]
#[command(name = "owncash", version)]
#[command(group(ArgGroup::new("mode").required(true).args(["scenario", "list", "all"])))]
struct Cli {
    /// Scenario to run.
    #[arg(long)]
    scenario: Option<String>,

    /// Seed for keys, pictures and delivery order.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Print the registered scenario names.
    #[arg(long)]
    list: bool,

    /// Run every scenario for seeds 1 through 10.
    #[arg(long)]
    all: bool,

    /// Write the report here (a directory with --all) instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Write the delivery trace here (a directory with --all).
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Policy override, repeatable: require_acceptance, retain_history,
    /// quorum_threshold.
    #[arg(long = "policy", value_name = "KEY=VALUE")]
    policy: Vec<String>,
}

const ALL_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

fn run_one(cli: &Cli, name: &str, overrides: &Overrides) -> Result<ScenarioReport, String> {
    let mut report = run_scenario(name, cli.seed, overrides).map_err(|e| e.to_string())?;
    report.write_files(cli.report.as_deref(), cli.trace.as_deref()).map_err(|e| e.to_string())?;
    if cli.report.is_none() {
        print!("{}", report.render());
    }
    Ok(report)
}

fn run_all(cli: &Cli, overrides: &Overrides) -> Result<bool, String> {
    for dir in [&cli.report, &cli.trace].into_iter().flatten() {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    let mut all_passed = true;
    for name in scenario_names() {
        for seed in ALL_SEEDS {
            let mut report = run_scenario(name, seed, overrides).map_err(|e| e.to_string())?;
            let passed = report.passed();
            all_passed &= passed;
            println!("{} {name} seed={seed}", if passed { "PASS" } else { "FAIL" });
            let report_path = cli.report.as_ref().map(|d| d.join(format!("{name}-seed{seed}.report")));
            let trace_path = cli.trace.as_ref().map(|d| d.join(format!("{name}-seed{seed}.trace")));
            report.write_files(report_path.as_deref(), trace_path.as_deref()).map_err(|e| e.to_string())?;
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.list {
        for name in scenario_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }

    let overrides = match Overrides::parse(&cli.policy) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let outcome = match &cli.scenario {
        Some(name) => {
            if !scenario_names().any(|n| n == name) {
                eprintln!("error: unknown scenario `{name}` (see --list)");
                return ExitCode::from(2);
            }
            run_one(&cli, name, &overrides).map(|r| r.passed())
        }
        None => run_all(&cli, &overrides),
    };

    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
