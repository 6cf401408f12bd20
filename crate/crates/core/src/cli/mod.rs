//! Command-line harness: `train`, `eval`, `sample`, `sweep`, `bench`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    evaluate, run_bench, run_eval, run_sample, run_sweep, run_train, BenchRow, SampleMode,
    SweepRow, TrainOutcome, BENCH_EPOCHS, CHECKPOINT_FILE, EVAL_METRICS, RESOLVED_CONFIG,
    TRACE_FILE,
};
pub use config::{
    ArchSection, DataSection, DataSource, EvalSection, LipschitzTarget, RunConfig, TrainSection,
    SWEEP_PARAMS,
};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::Evaluation(_) => {
            EXIT_NUMERIC
        }
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "envae", version, about = "Energy-score variational autoencoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.bin, trace.csv, resolved_config.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record real per-step milliseconds in trace.csv.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Evaluate a checkpoint; writes metrics.json and per-array CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode prior draws (--n) or a latent walk (--walk A,B --steps S).
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "walk")]
        n: Option<usize>,
        /// Seeds of the two prior draws joined by the walk.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        walk: Option<Vec<u64>>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate once per value of a whitelisted parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of loss.beta, loss.m_samples, arch.latent_dim.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time vanilla, fenvae and envae (M = 10, 50, 100); writes bench.csv.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> crate::Result<()> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            wall_clock,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let outcome = run_train(&cfg, &out, wall_clock)?;
            let last = outcome.trace.last_epoch();
            println!(
                "trained {} epochs; final total loss {}",
                outcome.checkpoint.epoch,
                last.map_or(f64::NAN, |e| e.total)
            );
        }
        Command::Eval {
            checkpoint,
            config,
            out,
        } => {
            let report = run_eval(&checkpoint, &RunConfig::load(&config)?, &out)?;
            for (k, v) in &report.scalars {
                println!("{k} = {v}");
            }
        }
        Command::Sample {
            checkpoint,
            out,
            n,
            walk,
            steps,
            seed,
        } => {
            let mode = match (n, walk) {
                (_, Some(w)) if w.len() == 2 => SampleMode::Walk {
                    seeds: (w[0], w[1]),
                    steps,
                },
                (_, Some(_)) => return Err(Error::config("--walk takes exactly two seeds")),
                (Some(n), None) => SampleMode::Prior { n },
                (None, None) => return Err(Error::config("sample needs --n or --walk")),
            };
            let files = run_sample(&checkpoint, &out, &mode, seed)?;
            println!("wrote {} files", files.len());
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let rows = run_sweep(&RunConfig::load(&config)?, &param, &values, &out)?;
            println!("wrote {} sweep rows", rows.len());
        }
        Command::Bench { config, out } => {
            for row in run_bench(&RunConfig::load(&config)?, &out)? {
                println!("{} M={}: {:.2} ms/epoch", row.variant, row.m_samples, row.median_epoch_ms);
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
