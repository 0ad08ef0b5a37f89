//! `cardiodx` binary: argument parsing and dispatch over the command
//! implementations in the library's `cli` module.

use cardiodx::cli::{cmd_evaluate, cmd_preprocess, cmd_synth, cmd_train, CliError, RunConfig};
use cardiodx::data::Split;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cardiodx",
    about = "Heart-sound arrhythmia detection: preprocessing, training, evaluation, synthetic data",
    version
)]
struct Args {
    /// Seed overriding the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (WAV + REFERENCE.csv + PATIENTS.csv).
    Synth {
        #[arg(long)]
        n_normal: Option<usize>,
        #[arg(long)]
        n_abnormal: Option<usize>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Denoise, low-pass and segment a dataset directory into 5 s clips.
    Preprocess {
        /// Input dataset directory.
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Also write before/after magnitude spectra per record.
        #[arg(long)]
        emit_fft: bool,
    },
    /// Train on the configured dataset and write checkpoint, report and curves.
    Train {
        /// Warm-start from a standard-cell checkpoint, freezing the conv stack.
        #[arg(long)]
        fine_tune_from: Option<PathBuf>,
        /// Epoch count override.
        #[arg(long)]
        epochs: Option<u32>,
        /// Batch size override.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Raw configuration overrides, `section.key=value` (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Score a dataset with a checkpoint and print metrics JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory to score.
        #[arg(long)]
        data: PathBuf,
        /// Restrict to records listed in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// With --manifest, keep only this split.
        #[arg(long)]
        split: Option<String>,
        /// Decision threshold override.
        #[arg(long)]
        tau: Option<f64>,
    },
}

fn parse_split(text: &str) -> Result<Split, CliError> {
    match text {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Input(format!(
            "unknown split {other:?}, expected train|val|test"
        ))),
    }
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Synth {
            n_normal,
            n_abnormal,
            force,
        } => {
            let out = args
                .out
                .ok_or_else(|| CliError::Input("synth requires --out".into()))?;
            let mut cfg = RunConfig::load(args.config.as_deref(), &[])?;
            let spec = &mut cfg.data.synth;
            if let Some(n) = n_normal {
                spec.n_normal = n;
            }
            if let Some(n) = n_abnormal {
                spec.n_abnormal = n;
            }
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let n = cmd_synth(&out, spec, force)?;
            println!("wrote {n} recordings to {}", out.display());
            Ok(())
        }
        Command::Preprocess { in_dir, emit_fft } => {
            let out = args
                .out
                .ok_or_else(|| CliError::Input("preprocess requires --out".into()))?;
            let cfg = RunConfig::load(args.config.as_deref(), &[])?;
            let rows = cmd_preprocess(&in_dir, &out, &cfg.preprocess, emit_fft)?;
            let clips: usize = rows.iter().map(|r| r.n_clips).sum();
            println!(
                "preprocessed {} recordings into {clips} clips at {}",
                rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            fine_tune_from,
            epochs,
            batch_size,
            set,
        } => {
            let out = args
                .out
                .ok_or_else(|| CliError::Input("train requires --out".into()))?;
            let mut overrides = set;
            if let Some(e) = epochs {
                overrides.push(format!("train.epochs={e}"));
            }
            if let Some(b) = batch_size {
                overrides.push(format!("train.batch_size={b}"));
            }
            if let Some(s) = args.seed {
                overrides.push(format!("seed={s}"));
            }
            let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
            let outputs = cmd_train(&cfg, &out, fine_tune_from.as_deref())?;
            println!("{}", outputs.metrics.to_json());
            println!(
                "checkpoint: {} (final tau {:.2})",
                outputs.checkpoint_path.display(),
                outputs.report.final_tau
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            data,
            manifest,
            split,
            tau,
        } => {
            let only = split.as_deref().map(parse_split).transpose()?;
            let doc = cmd_evaluate(&checkpoint, &data, manifest.as_deref(), only, tau)?;
            println!("{}", doc.to_json());
            if let Some(out) = args.out {
                std::fs::create_dir_all(&out)
                    .map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
                doc.write(&out.join("metrics.json"))
                    .map_err(|e| CliError::Internal(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CARDIODX_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
