use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use intersim_cli::{exit_code, run_scenario, sweep_density, ScenarioArgs, SweepArgs};

#[derive(Parser)]
#[command(name = "intersim", version, about = "Automated intersection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write traces, metrics and plots.
    RunScenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `rng_seed` from the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Collision point (1-4) for the distance plot.
        #[arg(long, default_value_t = 1)]
        point: u8,
    },
    /// Run a generated scenario for every spawn rate and seed.
    SweepDensity {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated spawn probabilities per approach per step.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunScenario {
            config,
            out,
            seed,
            point,
        } => run_scenario(&ScenarioArgs {
            config,
            out,
            seed,
            point,
        }),
        Command::SweepDensity {
            config,
            rates,
            seeds,
            out,
        } => sweep_density(&SweepArgs {
            config,
            rates,
            seeds,
            out,
        }),
    };
    match &result {
        Ok(m) => {
            println!(
                "{}: {} files in {} ({:.1} s), {} violations",
                m.command,
                m.files.len(),
                m.out_dir,
                m.wall_clock_seconds,
                m.violations
            );
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
