use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgfreq_cli::synth::{write_synthetic, SynthOptions};
use ecgfreq_cli::{load_config, CliResult, Overrides, Pipeline, Selection};
use ecgfreq_core::models::ArchId;

#[derive(Parser)]
#[command(name = "ecgfreq", version, about = "Sampling-frequency study for 12-lead ECG AFIB classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, resample and quality-check every record.
    Prepare(StageArgs),
    /// Patient-safe holdout, balancing and fold assignment.
    Split(StageArgs),
    /// k-fold training per (arch, fs) cell.
    Train(StageArgs),
    /// Per-fold validation predictions and the test-set ensemble.
    Eval(StageArgs),
    /// Metrics table, curves, calibration bins and confusion matrices.
    Report(StageArgs),
    /// All five stages in order.
    Run(StageArgs),
    /// Write a synthetic dataset and a matching experiment config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one architecture (cnn1d or cnnlstm).
    #[arg(long)]
    arch: Option<ArchId>,
    /// Restrict to one target sampling frequency.
    #[arg(long)]
    fs: Option<u32>,
    /// Replaces both the split seed and every training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    patients: usize,
    #[arg(long, default_value_t = 8)]
    afib_patients: usize,
    #[arg(long, default_value_t = 2)]
    records_per_patient: usize,
    #[arg(long, default_value_t = 500)]
    fs: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Epoch cap written into the generated config.
    #[arg(long)]
    max_epochs: Option<usize>,
}

fn pipeline(args: &StageArgs) -> CliResult<Pipeline> {
    let overrides = Overrides {
        seed: args.seed,
        test_frac: args.test_frac,
        folds: args.folds,
    };
    let cfg = load_config(&args.config, overrides)?;
    Pipeline::new(
        cfg,
        Selection {
            arch: args.arch,
            fs_hz: args.fs,
        },
    )
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(a) => pipeline(&a)?.prepare(),
        Command::Split(a) => pipeline(&a)?.split(),
        Command::Train(a) => pipeline(&a)?.train(),
        Command::Eval(a) => pipeline(&a)?.eval(),
        Command::Report(a) => pipeline(&a)?.report(),
        Command::Run(a) => {
            let p = pipeline(&a)?;
            p.prepare()?;
            p.split()?;
            p.train()?;
            p.eval()?;
            p.report()
        }
        Command::Synth(a) => write_synthetic(
            &a.out,
            &SynthOptions {
                patients: a.patients,
                afib_patients: a.afib_patients,
                records_per_patient: a.records_per_patient,
                fs_hz: a.fs,
                seed: a.seed,
                max_epochs: a.max_epochs,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
