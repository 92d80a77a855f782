use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use monoenv_cli::bench::cmd_benchmark;
use monoenv_cli::commands::{cmd_cgl, cmd_count_ce, cmd_envelope, cmd_train, cmd_verify, verdict_line};
use monoenv_cli::config::RunConfig;
use monoenv_core::envelope::EnvelopeMode;
use monoenv_core::solver::PairMode;

#[derive(Parser)]
#[command(name = "monoenv", version, about = "Monotone envelopes and counterexample-guided training for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Upper,
    Lower,
}

impl From<Mode> for EnvelopeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Upper => EnvelopeMode::Upper,
            Mode::Lower => EnvelopeMode::Lower,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search and train a baseline model per fold.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Envelope predictions for a point file or a fold's test set.
    Envelope {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV with a header row and one column per model input.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "upper")]
        mode: Mode,
        /// Restrict the monotone set to this input index.
        #[arg(long)]
        feature: Option<usize>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Counterexample-guided fine-tuning of a trained model.
    Cgl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feature: Option<usize>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Search for a monotonicity counterexample pair along one feature.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feature: usize,
        /// Stop at the first violating pair instead of maximizing the violation.
        #[arg(long)]
        any: bool,
    },
    /// Count points with an envelope counterexample.
    CountCe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        feature: Option<usize>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Full benchmark: quality, counterexample and timing tables.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    let load = |c: &Common| RunConfig::load(&c.config);
    match cli.command {
        Command::Train { common } => {
            let reports = cmd_train(&load(&common)?, &common.out)?;
            for r in reports {
                println!("fold {}: {} train {:.6} test {:.6}", r.fold, r.architecture, r.train_score, r.test_score);
            }
        }
        Command::Envelope { common, model, points, mode, feature, fold } => {
            let path = cmd_envelope(&load(&common)?, &model, points.as_deref(), mode.into(), feature, fold, &common.out)?;
            println!("{}", path.display());
        }
        Command::Cgl { common, model, feature, fold } => {
            let run = cmd_cgl(&load(&common)?, &model, feature, fold, &common.out)?;
            println!("selected round {} -> {}", run.selected_iteration, run.model_path.display());
        }
        Command::Verify { common, model, feature, any } => {
            let mode = if any { PairMode::Any } else { PairMode::Maximal };
            let search = cmd_verify(&load(&common)?, &model, feature, mode, Some(&common.out))?;
            println!("{}", verdict_line(&search));
        }
        Command::CountCe { common, model, points, feature, fold } => {
            for r in cmd_count_ce(&load(&common)?, &model, points.as_deref(), feature, fold, &common.out)? {
                println!("{}: {} of {} points ({} inconclusive)", r.set, r.count, r.points, r.inconclusive);
            }
        }
        Command::Benchmark { common } => {
            let report = cmd_benchmark(&load(&common)?, &common.out)
                .with_context(|| format!("benchmark into {}", common.out.display()))?;
            println!("{} fold results written to {}", report.folds.len(), common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
