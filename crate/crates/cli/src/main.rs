//! `cobra`: generate synthetic data, train, evaluate, sweep and report.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cobra_core::trainer::TrainMode;

use crate::commands::TrainArgs;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "cobra",
    version,
    about = "Continual vision-brain decoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-subject dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over a step plan and write one checkpoint per step.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Steps separated by `|`, subjects by `,`, e.g. "3,4|6,8|1,2|5,7".
        #[arg(long)]
        plan: Option<String>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrainMode>,
        /// Rehearsal samples kept per completed subject (0 = rehearsal-free).
        #[arg(long)]
        buffer: Option<usize>,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the checkpoints of a training run.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// NDJSON report path; CSV summaries are written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and evaluate once per prompt count.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated prompt counts, e.g. "1,2,4,8,16".
        #[arg(long)]
        topk: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter count per number of subjects, one subject per step.
    Growth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_subjects: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a complete experiment config with default values.
    ConfigTemplate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: cobra_core::CobraError| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => commands::generate(&config, seed, &out),
        Command::Train {
            config,
            data,
            plan,
            mode,
            buffer,
            out,
        } => commands::train(TrainArgs {
            config: &config,
            data: &data,
            plan: plan.as_deref(),
            mode,
            buffer,
            out: out.as_deref(),
        }),
        Command::Eval {
            config,
            checkpoints,
            data,
            report,
        } => commands::eval(&config, &checkpoints, &data, &report),
        Command::Ablate {
            config,
            data,
            topk,
            out,
        } => commands::ablate(&config, &data, &topk, out.as_deref()),
        Command::Growth {
            config,
            max_subjects,
            out,
        } => commands::growth(&config, max_subjects, &out),
        Command::ConfigTemplate { out } => commands::config_template(out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cobra: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
