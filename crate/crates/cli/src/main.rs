//! `hedonic`: synthesize data, fetch aerial patches, train and evaluate price
//! models, and render occlusion heatmaps.

mod commands;
mod config;
mod failure;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hedonic_core::data::SplitName;
use hedonic_core::models::ModelKind;

use config::{Overrides, RunConfig};
use failure::Failure;

#[derive(Parser)]
#[command(name = "hedonic", version, about = "Hedonic house-price models with aerial imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted image effects, plus a run config.
    Synth {
        /// SynthSpec JSON; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Download tiles and compose one image patch per record.
    FetchTiles {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model and write its checkpoint and per-epoch report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        model: KindArg,
        /// Checkpoint path; the report goes next to it as `.train.jsonl`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print RMSE, MAE and MAPE (USD) on one split as JSON.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Occlusion heatmap for one record: `{id}_heatmap.png` and `.json`.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Percent reduction of each metric from baseline to challenger.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        challenger: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Linreg,
    Mlp,
    Fusion,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Linreg => ModelKind::Linreg,
            KindArg::Mlp => ModelKind::Mlp,
            KindArg::Fusion => ModelKind::Fusion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Synth { spec, out: dir, seed, n } => {
            commands::synth(out, spec.as_deref(), &dir, seed, n)
        }
        Command::FetchTiles { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            commands::fetch_tiles_cmd(out, &cfg)
        }
        Command::Train {
            config,
            model,
            out: ckpt,
            epochs,
            lr,
            batch_size,
            patience,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config, &overrides)?;
            if let Some(v) = epochs {
                cfg.training.max_epochs = v;
            }
            if let Some(v) = lr {
                cfg.training.optimizer.lr = v;
            }
            if let Some(v) = batch_size {
                cfg.training.batch_size = v;
            }
            if let Some(v) = patience {
                cfg.training.patience = v;
            }
            cfg.validate()?;
            commands::train_cmd(out, &cfg, model.into(), &ckpt)
        }
        Command::Evaluate {
            ckpt,
            config,
            split,
            overrides,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            commands::evaluate_cmd(out, &cfg, &ckpt, split.into())
        }
        Command::Explain {
            ckpt,
            config,
            id,
            window,
            stride,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config, &overrides)?;
            if let Some(v) = window {
                cfg.occlusion.window = v;
            }
            if let Some(v) = stride {
                cfg.occlusion.stride = v;
            }
            commands::explain_cmd(out, &cfg, &ckpt, &id)
        }
        Command::Compare {
            baseline,
            challenger,
        } => commands::compare_cmd(out, &baseline, &challenger),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let reason = e.kind().to_string();
            eprintln!("{}", Failure::usage(reason).to_json_line());
            return ExitCode::from(failure::EXIT_USAGE as u8);
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json_line());
            ExitCode::from(f.code as u8)
        }
    }
}
