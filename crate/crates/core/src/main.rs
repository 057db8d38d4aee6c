use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracvolterra::cli::{load_config, run_experiment, ExperimentConfig};
use fracvolterra::Error;

#[derive(Parser)]
#[command(name = "fracvolterra", version, about = "Run fBm-driven Volterra experiments from a config file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV, JSON summary and manifest.
    Run {
        config: PathBuf,
        /// Output directory (overrides `run.output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides `run.workers`).
        #[arg(long)]
        workers: Option<usize>,
        /// Master seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and print its canonical form and hash.
    Validate { config: PathBuf },
}

fn report(e: &Error) {
    match e {
        Error::ConfigInvalid(msgs) => {
            eprintln!("invalid configuration:");
            for m in msgs {
                eprintln!("  - {m}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    load_config(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}", cfg.canonical());
                println!("hash {}", cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                report(&e);
                ExitCode::from(2)
            }
        },
        Command::Run { config, out, workers, seed } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    report(&e);
                    return ExitCode::from(2);
                }
            };
            if out.is_some() {
                cfg.output = out;
            }
            if let Some(w) = workers {
                if w == 0 {
                    eprintln!("error: --workers must be at least 1");
                    return ExitCode::from(2);
                }
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match run_experiment(&cfg) {
                Ok(m) if m.complete => {
                    println!("{} complete, config hash {}", cfg.experiment.id(), m.config_hash);
                    ExitCode::SUCCESS
                }
                Ok(m) => {
                    eprintln!("run incomplete: {}", m.error.unwrap_or_default());
                    ExitCode::from(1)
                }
                Err(e) => {
                    report(&e);
                    ExitCode::from(1)
                }
            }
        }
    }
}
