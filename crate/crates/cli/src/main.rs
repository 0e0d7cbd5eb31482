use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use circsched_core::config::ScenarioConfig;
use circsched_core::report;
use circsched_core::{run_simulation, Error, StrategyKind};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

/// Circulating-model scheduler simulator.
#[derive(Parser)]
#[command(name = "circsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv, summary.csv and curves.csv.
    Run {
        /// Scenario TOML file or preset name.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the scenario's strategy.
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Run strategies x seeds and write summary.csv and comparison.csv.
    Compare {
        config: String,
        /// Comma-separated strategy names; defaults to all four.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        /// Number of seeds, counting up from the scenario seed (or --seed).
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Check a scenario and print its normalized form.
    Validate { config: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config_error() => EXIT_CONFIG,
        Some(Error::InvalidResource(_)) => EXIT_CONFIG,
        _ => EXIT_IO,
    }
}

fn load(source: &str) -> anyhow::Result<ScenarioConfig> {
    let cfg = ScenarioConfig::load(source)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(BufWriter::new(file))
}

fn prepare_out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config, seed, out_dir, strategy } => {
            let mut cfg = load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(kind) = strategy {
                cfg.strategy = kind;
            }
            let (trace, summary) = run_simulation(&cfg)?;
            prepare_out_dir(&out_dir)?;
            report::write_trace(create(&out_dir, "trace.csv")?, &trace, cfg.label_count())
                .context("writing trace.csv")?;
            report::write_summary(create(&out_dir, "summary.csv")?, std::slice::from_ref(&summary))
                .context("writing summary.csv")?;
            report::write_curves(create(&out_dir, "curves.csv")?, &trace).context("writing curves.csv")?;
            println!(
                "{} seed {}: {} rounds, final accuracy {:.4}, wrote {}",
                summary.strategy,
                summary.seed,
                summary.rounds,
                summary.final_accuracy,
                out_dir.display()
            );
        }
        Command::Compare { config, strategies, seeds, seed, out_dir } => {
            let cfg = load(&config)?;
            let strategies = if strategies.is_empty() {
                StrategyKind::ALL.to_vec()
            } else {
                strategies
            };
            let base = seed.unwrap_or(cfg.seed);
            let seeds: Vec<u64> = (0..seeds).map(|i| base.wrapping_add(i)).collect();
            let runs = report::run_compare(&cfg, &strategies, &seeds)?;
            prepare_out_dir(&out_dir)?;
            report::write_summary(create(&out_dir, "summary.csv")?, &runs).context("writing summary.csv")?;
            report::write_comparison(create(&out_dir, "comparison.csv")?, &runs)
                .context("writing comparison.csv")?;
            for a in report::aggregate(&runs) {
                println!(
                    "{:>15} threshold {}: median {} ({} unreached of {})",
                    a.strategy, a.threshold, a.median, a.unreached, a.runs
                );
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}
