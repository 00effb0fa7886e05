use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sarl::SarlError;

mod commands;
mod config;

use config::{parse_config, Overrides, UsageError};

/// Span-based anti-bias aspect sentiment classification with unsupervised
/// opinion extraction.
#[derive(Debug, Parser)]
#[command(name = "sarl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes per-epoch checkpoints, the epoch log and the final checkpoint.
    Train(Overrides),
    /// Classification, extraction and bias metrics of a checkpoint on a dataset.
    Evaluate(Overrides),
    /// JSONL dump of predictions with the top-N opinion candidates per aspect.
    Extract(Overrides),
    /// Counts of prior-contradicting aspects predicted as their prior.
    BiasReport(Overrides),
    /// Generate the synthetic template corpus and its lexicon.
    GenData(Overrides),
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    for cause in err.chain() {
        if let Some(SarlError::NonFinite { .. }) = cause.downcast_ref::<SarlError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

fn run(command: Command) -> anyhow::Result<()> {
    let (flags, f): (&Overrides, fn(&config::CliConfig) -> anyhow::Result<()>) = match &command {
        Command::Train(o) => (o, commands::train_command),
        Command::Evaluate(o) => (o, commands::evaluate_command),
        Command::Extract(o) => (o, commands::extract_command),
        Command::BiasReport(o) => (o, commands::bias_report_command),
        Command::GenData(o) => (o, commands::gen_data_command),
    };
    let cfg = parse_config(flags)?;
    f(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
