use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairleak::dataset::{generate_synthetic, write_csv, SyntheticConfig};
use fairleak::harness::{compare_attacks, run_experiment, run_sweep, ExperimentConfig, SweepSpec};
use fairleak::{seed, PrivacyReport};

#[derive(Parser)]
#[command(name = "fairleak", version, about = "Membership-privacy audit of fair classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset and write it as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train both pools, audit them and write the report and tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run one experiment per (value, repetition) of a sweep file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the single vs per-subgroup attack table of a report.
    Compare {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenData { config, out, seed: s } => {
            let cfg = SyntheticConfig::from_file(&config).map_err(|e| e.to_string())?;
            let data = generate_synthetic(&cfg, seed::derive(s, "data", 0)).map_err(|e| e.to_string())?;
            write_csv(&data, &out).map_err(|e| e.to_string())?;
            eprintln!("wrote {} points to {}", data.len(), out.display());
        }
        Command::Run { config, out, jobs } => {
            let cfg = ExperimentConfig::from_file(&config).map_err(|e| e.to_string())?;
            let report = run_experiment(&cfg, Some(&out), jobs).map_err(|e| e.to_string())?;
            for row in &report.accuracy {
                eprintln!(
                    "{:>13}: train acc {:.3}, test acc {:.3}",
                    row.pool.name(),
                    row.train_accuracy,
                    row.test_accuracy
                );
            }
            eprintln!("outputs in {}", out.display());
        }
        Command::Sweep { config, sweep, out, jobs } => {
            let cfg = ExperimentConfig::from_file(&config).map_err(|e| e.to_string())?;
            let spec = SweepSpec::from_file(&sweep).map_err(|e| e.to_string())?;
            let outcome = run_sweep(&cfg, &spec, Some(&out), jobs).map_err(|e| e.to_string())?;
            print!("{}", outcome.summary_csv);
        }
        Command::Compare { report, out } => {
            let text = std::fs::read_to_string(&report).map_err(|e| format!("{}: {e}", report.display()))?;
            let report = PrivacyReport::from_json(&text).map_err(|e| e.to_string())?;
            print!("{}", compare_attacks(&report, &out).map_err(|e| e.to_string())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
