//! `paradram`: run, resume and post-process delayed-rejection adaptive
//! Metropolis simulations.
//!
//! Exit codes: 0 success, 1 usage or specification error, 2 output clash,
//! 3 objective failure, 4 stopped early by `--stop-after` (rerun to resume).

mod commands;
mod export;
mod external;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paradram::Error;

use commands::{Fabric, Format, Mode, RunRequest, Target, Timing};
use export::ExportOptions;

#[derive(Parser)]
#[command(name = "paradram", version, about = "Delayed-rejection adaptive Metropolis sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation, or resume it if an interrupted file set exists.
    Run {
        /// Specification file of `key = value` lines; flags take precedence.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// himmelblau, mvn:<d> (standard normal) or exec:<program>.
        #[arg(long)]
        target: Target,
        #[arg(long)]
        ndim: Option<usize>,
        /// Number of ranks.
        #[arg(long)]
        np: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Output prefix; defaults to an automatic name under $PARADRAM_OUT_DIR.
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// How fork-join ranks execute.
        #[arg(long, value_enum, default_value = "local")]
        fabric: Fabric,
        /// Stop after this many verbose steps, leaving a resumable file set.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Regenerate the refined sample file from a chain file.
    Refine {
        chain: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Exact size of the refined sample (-1: as refined).
        #[arg(long, allow_hyphen_values = true)]
        sample_size: Option<i64>,
        /// Sample file to write; defaults to the chain's `_sample.txt` sibling.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the effective acceptance rate and predict the parallel speedup.
    Predict {
        /// A fork-join report or chain file.
        path: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Seconds per objective evaluation.
        #[arg(long)]
        tp: Option<f64>,
        /// Communication seconds per rank per round.
        #[arg(long)]
        to: Option<f64>,
        /// Serial seconds per step.
        #[arg(long)]
        ts: Option<f64>,
        /// Largest rank count in the speedup table.
        #[arg(long)]
        np_max: Option<usize>,
    },
    /// Write plot data (traces, ACF, adaptation, 2-D histogram) as CSV.
    Export {
        /// A chain or sample file.
        path: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// 1-based variables of the histogram axes.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1, 2])]
        pair: Vec<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Clash(_) => 2,
        Error::Objective { .. } | Error::NonFiniteStart { .. } | Error::WorkerFailure { .. } => 3,
        Error::Interrupted(_) => 4,
        _ => 1,
    }
}

fn dispatch(command: Command) -> paradram::Result<()> {
    match command {
        Command::Run {
            spec,
            target,
            ndim,
            np,
            mode,
            out,
            seed,
            fabric,
            stop_after,
        } => commands::run(&RunRequest {
            spec,
            target,
            ndim,
            np,
            mode,
            out,
            seed,
            fabric,
            stop_after,
        }),
        Command::Refine {
            chain,
            format,
            sample_size,
            out,
        } => commands::refine(&chain, format, sample_size, out),
        Command::Predict {
            path,
            format,
            tp,
            to,
            ts,
            np_max,
        } => commands::predict(&path, format, &Timing { tp, to, ts }, np_max),
        Command::Export {
            path,
            format,
            out_dir,
            max_lag,
            bins,
            pair,
        } => {
            if pair.contains(&0) {
                return Err(Error::DimensionMismatch("--pair variables are 1-based".into()));
            }
            let options = ExportOptions {
                max_lag,
                bins,
                pair: (pair[0] - 1, pair[1] - 1),
            };
            commands::export_plot_data(&path, format, out_dir, &options)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Interrupted(n) => {
                    eprintln!("stopped after {n} verbose steps; rerun the same command to resume")
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
