//! `fedppd` command-line front end.
//!
//! Exit codes: 0 success, 2 config validation, 3 I/O, 4 numeric failure,
//! 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedppd::config::ExperimentConfig;
use fedppd::exec;
use fedppd::experiment::{self, Split};
use fedppd::Error;

#[derive(Parser)]
#[command(name = "fedppd", version, about = "Desk-scale Bayesian federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and client partition as CSV/JSON.
    GenData(Common),
    /// Run federated training.
    Train(Common),
    /// Run the federated active-learning loop.
    Active(Common),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Train,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let prep = exec::with_threads(c.threads, || experiment::gen_data(&cfg, &c.out))?;
            println!(
                "wrote {} training rows, {} test rows and {} client partitions to {}",
                prep.pool.len(),
                prep.test.len(),
                prep.plan.clients.len(),
                c.out.display()
            );
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = exec::with_threads(c.threads, || experiment::train(&cfg, &c.out))?;
            let m = out.metrics.served_report();
            println!(
                "{} rounds; served {} model: accuracy {:.4}, ECE {:.4}, Brier {:.4}",
                out.records.len(),
                out.metrics.served,
                m.accuracy,
                m.ece,
                m.brier
            );
        }
        Command::Active(c) => {
            let cfg = c.load()?;
            let out = exec::with_threads(c.threads, || experiment::active(&cfg, &c.out))?;
            for p in &out.curve {
                println!(
                    "active round {}: {} labeled per client, accuracy {:.4}",
                    p.active_round, p.labeled_per_client, p.test_accuracy
                );
            }
        }
        Command::Eval {
            common: c,
            checkpoint,
            split,
        } => {
            let cfg = c.load()?;
            let split = match split {
                SplitArg::Test => Split::Test,
                SplitArg::Train => Split::Train,
            };
            let report = exec::with_threads(c.threads, || experiment::eval(&cfg, &checkpoint, split, &c.out))?;
            println!(
                "{} split: accuracy {:.4}, ECE {:.4}, MCE {:.4}, Brier {:.4}",
                split.name(),
                report.accuracy,
                report.ece,
                report.mce,
                report.brier
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
