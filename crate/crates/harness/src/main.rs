use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vpc_harness::config::{dump_defaults, ScenarioConfig, ScenarioKind};
use vpc_harness::{output, run_scenario, selftest};

/// Visual predictive control scenarios for a quadrotor.
#[derive(Parser)]
#[command(name = "vpc", version)]
struct Cli {
    /// Output directory for CSV, JSON and SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Record wall-clock solve times (makes logs non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run { config: PathBuf },
    /// Success-rate sweep with and without the perception objective.
    Sweep { config: PathBuf },
    /// Open-loop prediction comparison.
    Predict { config: PathBuf },
    /// Numerical self-checks.
    Selftest {
        /// Print the default configuration of every scenario kind and exit.
        #[arg(long)]
        dump_config: bool,
    },
}

fn load(cli: &Cli, path: &PathBuf, expect: Option<ScenarioKind>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path, expect)?;
    if let Some(k) = expect {
        anyhow::ensure!(
            cfg.scenario == k,
            "{} describes a {} scenario, expected {}",
            path.display(),
            cfg.scenario.name(),
            k.name()
        );
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.sim.timing |= cli.timing;
    Ok(cfg)
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let (path, expect) = match &cli.command {
        Command::Selftest { dump_config: true } => {
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&dump_defaults())?
            );
            return Ok(true);
        }
        Command::Selftest { dump_config: false } => {
            let checks = selftest::run_all();
            for c in &checks {
                if !cli.quiet || !c.passed {
                    println!(
                        "{} {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Run { config } => (config, None),
        Command::Sweep { config } => (config, Some(ScenarioKind::SuccessSweep)),
        Command::Predict { config } => (config, Some(ScenarioKind::PredictCompare)),
    };
    let cfg = load(cli, path, expect)?;
    let report = run_scenario(&cfg)?;
    let files = output::emit(&report, &cli.out)?;
    if !cli.quiet {
        print!("{}", output::digest(&report));
        println!("wrote {} files to {}", files.len(), cli.out.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
