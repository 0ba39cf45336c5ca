//! Command-line front-end: `dpcollapse <command> --config <path> [...]`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpcollapse::cli::{self, Command as RunCommand, RunOptions};

#[derive(Parser)]
#[command(
    name = "dpcollapse",
    version,
    about = "Numerical laboratory for the gravity-related (DP) spontaneous-collapse model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// Scenario configuration file (strict JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (defaults to the config's `output`, or `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config's `seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread cap
    #[arg(long)]
    threads: Option<usize>,
    /// Config overrides as dotted-path assignments, e.g. constants.newton_g=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Collapse rate of one displaced configuration
    Rate(CommonArgs),
    /// Rate-vs-displacement or rate-vs-smearing curve
    Curve(CommonArgs),
    /// Closed-form equilibrium report
    Equilibrium(CommonArgs),
    /// Moment-ODE, stochastic-grid, or scaled-universe dynamics
    Dynamics(CommonArgs),
    /// Delayed-gravity Cavendish response and detectability table
    Cavendish(CommonArgs),
    /// Run the built-in validation suite
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated criterion numbers (all when omitted)
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got '{kv}'"))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, criteria) = match cli.command {
        Command::Rate(c) => (RunCommand::Rate, c, Vec::new()),
        Command::Curve(c) => (RunCommand::Curve, c, Vec::new()),
        Command::Equilibrium(c) => (RunCommand::Equilibrium, c, Vec::new()),
        Command::Dynamics(c) => (RunCommand::Dynamics, c, Vec::new()),
        Command::Cavendish(c) => (RunCommand::Cavendish, c, Vec::new()),
        Command::Validate { common, criteria } => (RunCommand::Validate, common, criteria),
    };
    let overrides = match parse_overrides(&common.set) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        config_path: common.config,
        out_dir: common.out,
        seed: common.seed,
        threads: common.threads,
        overrides,
        criteria,
    };
    match cli::run(command, &opts) {
        Ok(summary) => {
            for artifact in &summary.artifacts {
                println!("wrote {}", artifact.display());
            }
            match summary.validation_passed {
                Some(false) => {
                    eprintln!("validation failed");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
