use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esn_cli::commands::{self, Axis, PairsOptions, TrainOptions};
use esn_cli::{CliError, Result, RunConfig};
use esn_core::{Execution, PairScoring};

#[derive(Parser)]
#[command(
    name = "esnlm",
    version,
    about = "Echo state network language models: train, evaluate, sweep"
)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frozen, trainable and total parameter counts per state size.
    CountParams {
        /// Base config; defaults to the standard 50257-token setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated state sizes.
        #[arg(long)]
        values: Option<String>,
    },
    /// Train the readout for one epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a mid-epoch checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Token-weighted validation NLL of a checkpoint.
    EvalNll {
        checkpoint: PathBuf,
        /// Corpus manifest; defaults to the checkpoint's `valid_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimal-pair accuracy of a checkpoint.
    EvalPairs {
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        tags: Option<PathBuf>,
        /// Manifest supplying BOS/EOS ids; defaults to the training manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `total` or `per-token`.
        #[arg(long)]
        scoring: Option<PairScoring>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one model per value of a hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// state_size, connectivity or leak_min.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values; `2^-7` style powers are accepted.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Master seed; run i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's header and tensor shapes after verifying it.
    InspectCheckpoint { checkpoint: PathBuf },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory (pass --out or set out_dir)".into()))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::CountParams { config, values } => {
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::parse(commands::STANDARD_SETUP).expect("built-in setup parses"),
            };
            let sizes: Vec<usize> = match values {
                Some(v) => commands::parse_values(&v)?
                    .into_iter()
                    .map(|x| {
                        (x.fract() == 0.0 && x >= 1.0)
                            .then_some(x as usize)
                            .ok_or_else(|| CliError::Usage(format!("state size {x} is not a positive integer")))
                    })
                    .collect::<Result<_>>()?,
                None => commands::DEFAULT_COUNT_SIZES.to_vec(),
            };
            let rows = commands::count_params_rows(&base, &sizes)?;
            print!("{}", commands::render_param_table(&base, &rows));
        }
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let cfg = load_config(&config, seed)?;
            let out_dir = out_dir(out, &cfg)?;
            let outcome = commands::train(&cfg, &TrainOptions { out_dir, resume, exec })?;
            let f = outcome.filter;
            eprintln!(
                "kept {} sentences ({} dropped, {} truncated)",
                f.kept_sequences, f.dropped_sequences, f.truncated_sequences
            );
            if outcome.resumed_from > 0 {
                eprintln!("resumed after batch {}", outcome.resumed_from);
            }
            let stats = outcome.checkpoint.stats;
            println!("batches   {}", stats.batches);
            println!("tokens    {}", stats.tokens);
            println!("train_nll {:.6}", stats.train_nll());
            println!("checkpoint {} sha256 {}", outcome.final_path.display(), outcome.digest);
        }
        Command::EvalNll {
            checkpoint,
            manifest,
            out,
        } => {
            let r = commands::eval_nll(&checkpoint, manifest.as_deref(), out.as_deref(), exec)?;
            println!("sentences      {}", r.sentences);
            println!("validation_nll {:.6}", r.validation_nll);
        }
        Command::EvalPairs {
            checkpoint,
            pairs,
            tags,
            manifest,
            scoring,
            out,
        } => {
            let opts = PairsOptions {
                pairs,
                tags,
                manifest,
                scoring,
            };
            let report = commands::eval_pairs(&checkpoint, &opts, out.as_deref(), exec)?;
            print!("{}", commands::render_pair_table(&report));
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let values = commands::parse_values(&values)?;
            let out_dir = out.or_else(|| cfg.out_dir.clone());
            let report = commands::sweep(&cfg, axis, &values, seeds, exec)?;
            if let Some(dir) = out_dir {
                commands::write_sweep(&report, &dir)?;
            }
            print!("{}", commands::render_sweep_table(&report));
        }
        Command::InspectCheckpoint { checkpoint } => print!("{}", commands::inspect(&checkpoint)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
