use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod run;

use config::{usage, ExperimentConfig, Overrides, UsageError};
use run::Diagnostic;

/// Meta-learning with learned initial-parameter attenuation: train, evaluate
/// and diagnose MAML-family models on sinusoid regression and synthetic
/// classification tasks.
///
/// Exit codes: 0 ok, 1 usage or invalid configuration, 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "metaforget", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train a model; writes checkpoint.txt, train.csv and the resolved config
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint after 1..n adaptation steps; writes eval.csv
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Gradient conflict, inner-loop landscape and γ logs for a checkpoint
    Diagnose {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of: conflict, landscape, gamma-log
        #[arg(long, value_enum, value_delimiter = ',')]
        which: Vec<Diagnostic>,
        /// Number of held-out tasks
        #[arg(long)]
        tasks: Option<usize>,
        /// Also measure conflict among each task's query examples
        #[arg(long)]
        within_task: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate with one layer's weight and bias scaled by each γ; writes sweep.csv
    Sweep {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated layer indices
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        /// Comma-separated γ values
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the finite-difference, sampler, determinism and oracle suites
    Selftest {
        /// Only suites whose name contains this
        #[arg(long)]
        filter: Option<String>,
    },
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train { overrides } => run::run_train(&ExperimentConfig::resolve(&overrides, None)?),
        Command::Eval { checkpoint, overrides } => {
            run::run_eval(&ExperimentConfig::resolve(&overrides, checkpoint)?).map(drop)
        }
        Command::Diagnose { checkpoint, which, tasks, within_task, overrides } => {
            let mut cfg = ExperimentConfig::resolve(&overrides, checkpoint)?;
            if let Some(n) = tasks {
                cfg.diagnostics.tasks = n;
            }
            cfg.diagnostics.within_task |= within_task;
            cfg.validate()?;
            run::run_diagnose(&cfg, &which)
        }
        Command::Sweep { checkpoint, layers, gammas, overrides } => {
            let mut cfg = ExperimentConfig::resolve(&overrides, checkpoint)?;
            if let Some(l) = layers {
                cfg.diagnostics.sweep_layers = l;
            }
            if let Some(g) = gammas {
                cfg.diagnostics.sweep_gammas = g;
            }
            if cfg.diagnostics.sweep_layers.is_empty() || cfg.diagnostics.sweep_gammas.is_empty() {
                return Err(usage("sweep needs at least one layer and one gamma"));
            }
            run::run_sweep(&cfg)
        }
        Command::Selftest { filter } => {
            if run::run_selftest(filter.as_deref())? {
                Ok(())
            } else {
                anyhow::bail!("selftest failed")
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
