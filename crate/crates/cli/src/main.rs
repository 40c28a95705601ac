//! `kfls`: run the wall-collision experiment, filter external data, or run the
//! randomized self-checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod filter;
mod output;
mod simulate;

use kfls_core::verify::{self, Suite};

#[derive(Parser)]
#[command(name = "kfls", version, about = "Kalman filter least squares experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the mass-spring-damper with a wall and compare the filters.
    Simulate {
        /// Experiment config (JSON). Defaults to the built-in benchmark setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run seeds 0..n.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Run the configured filters over a data CSV (columns k, y..., u...).
    Filter {
        data: PathBuf,
        /// Model and filter config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a randomized self-check suite.
    Verify {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
        #[arg(long, default_value_t = verify::DEFAULT_SEED)]
        seed: u64,
    },
}

fn run_verify(suite: &str, seed: u64) -> Result<bool, kfls_core::Error> {
    let suite: Suite = suite.parse()?;
    let checks = verify::run_suite(suite, seed)?;
    println!("suite {suite}, seed {seed}");
    let mut ok = true;
    for check in &checks {
        println!("{check}");
        if !check.passed() {
            ok = false;
            for failure in &check.failures {
                eprintln!("  {}: {failure}", check.name);
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            seeds,
        } => simulate::run(config.as_deref(), &out, seed, seeds).map(|_| true),
        Command::Filter { data, config, out } => filter::run(&data, &config, &out).map(|_| true),
        Command::Verify { suite, seed } => run_verify(&suite, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
