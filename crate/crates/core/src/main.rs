use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use catgrad::bench::{self, BenchConfig};

#[derive(Parser)]
#[command(name = "catgrad", version, about = "Gradient estimators for categorical latent variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle suite and write verify.json.
    Verify(Common),
    /// Train the toy model with each configured estimator.
    Train(Common),
    /// Measure every estimator's gradient variance along one training run.
    VarianceReplay(Common),
}

fn load(common: &Common) -> anyhow::Result<BenchConfig> {
    let mut config = match &common.config {
        Some(path) => BenchConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Verify(common) => {
            let report = bench::verify(&load(&common)?, &common.out_dir)?;
            for check in &report.checks {
                let status = if check.pass { "PASS" } else { "FAIL" };
                println!("{status} {} ({} failing of {})", check.name, check.failures, check.instances);
                if let Some(e) = &check.error {
                    println!("     error: {e}");
                }
            }
            Ok(report.pass)
        }
        Command::Train(common) => {
            let report = bench::train(&load(&common)?, &common.out_dir)?;
            for run in &report.runs {
                println!(
                    "{}: elbo {:.3} -> {:.3}, bound {:.3} -> {:.3}",
                    run.estimator, run.initial_elbo, run.final_elbo, run.initial_bound, run.final_bound
                );
            }
            Ok(true)
        }
        Command::VarianceReplay(common) => {
            let report = bench::variance_replay(&load(&common)?, &common.out_dir)?;
            for e in &report.estimators {
                println!("{:<18} {:.6e}  ({:.2} evals/example)", e.estimator, e.mean_variance, e.f_evals_per_example);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
