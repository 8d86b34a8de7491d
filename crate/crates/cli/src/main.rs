//! `maskforge`: command-line runner for the two-phase training pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or inputs),
//! 2 I/O error, 3 numeric abort. Artifacts on disk are pure functions of
//! `(config, seed)`; wall-clock time is only printed to stdout.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use maskforge_core::detkit::format_ap_table;
use maskforge_core::pipeline::{
    parse_config, run_augment, run_eval, run_generate, run_phase1, run_phase2,
    run_phase2_control, PipelineConfig, PipelineError, RunReport, Split, DETECTOR_PHASE1_CKPT,
    DETECTOR_PHASE2_CKPT, SEPGAN_CKPT,
};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "maskforge", version, about = "Two-phase mask-enhanced detector training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to disk in the standard layout.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Scene count (default: the configured training count).
        #[arg(long)]
        count: Option<usize>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply the batch-enhancement policy to a dataset on disk.
    Augment {
        #[arg(long)]
        config: PathBuf,
        /// Input dataset directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Phase 1: detector pre-training, then separation-model training.
    #[command(name = "train-phase1")]
    TrainPhase1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Phase 2: continue detector training with mask-aware enhancement.
    #[command(name = "train-phase2")]
    TrainPhase2 {
        #[arg(long)]
        config: PathBuf,
        /// Phase-1 detector checkpoint.
        #[arg(long)]
        detector_ckpt: PathBuf,
        /// Separation-model checkpoint (ignored with --control).
        #[arg(long)]
        sepgan_ckpt: Option<PathBuf>,
        /// Plain continuation without enhancement (control arm).
        #[arg(long)]
        control: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a detector checkpoint and print the per-class AP table.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Detector checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset split to score.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn load(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<PipelineConfig, PipelineError> {
    let mut config = parse_config(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.out_dir = out;
    }
    Ok(config)
}

fn last_loss(report: &RunReport, phase: &str) -> Option<f64> {
    report
        .records
        .iter()
        .rev()
        .find(|r| r.phase == phase && r.metric == "det_loss")
        .map(|r| r.value)
}

fn run(command: Command) -> Result<String, PipelineError> {
    match command {
        Command::Generate { config, count, out, seed } => {
            let config = load(&config, seed, None)?;
            let n = run_generate(&config, count, &out)?;
            Ok(format!("wrote {n} scenes to {}", out.display()))
        }
        Command::Augment { config, input, out, seed } => {
            let config = load(&config, seed, None)?;
            let report = run_augment(&config, &input, &out)?;
            let chunks = report
                .records
                .iter()
                .find(|r| r.metric == "chunks_applied")
                .map_or(0.0, |r| r.value);
            let samples = report
                .records
                .iter()
                .find(|r| r.metric == "samples")
                .map_or(0.0, |r| r.value);
            Ok(format!(
                "augmented {samples} samples into {} ({chunks} chunks perturbed)",
                out.display()
            ))
        }
        Command::TrainPhase1 { config, seed, out } => {
            let config = load(&config, seed, out)?;
            let report = run_phase1(&config)?;
            let mut summary = format!(
                "phase 1 complete: {} and {} under {}",
                DETECTOR_PHASE1_CKPT,
                SEPGAN_CKPT,
                config.out_dir.display()
            );
            if let Some(loss) = last_loss(&report, "phase1") {
                summary.push_str(&format!("\nfinal detector loss: {loss:.6}"));
            }
            Ok(summary)
        }
        Command::TrainPhase2 { config, detector_ckpt, sepgan_ckpt, control, seed, out } => {
            let config = load(&config, seed, out)?;
            let report = if control {
                run_phase2_control(&config, &detector_ckpt)?
            } else {
                let sepgan = sepgan_ckpt.ok_or_else(|| {
                    PipelineError::Validation(
                        "--sepgan-ckpt is required unless --control is set".into(),
                    )
                })?;
                run_phase2(&config, &detector_ckpt, &sepgan)?
            };
            let arm = if control { "control" } else { "enhanced" };
            let mut summary = format!(
                "phase 2 ({arm}) complete: {} under {}",
                DETECTOR_PHASE2_CKPT,
                config.out_dir.display()
            );
            if let Some(loss) = last_loss(&report, "phase2") {
                summary.push_str(&format!("\nfinal detector loss: {loss:.6}"));
            }
            Ok(summary)
        }
        Command::Eval { config, ckpt, split, seed, out } => {
            let config = load(&config, seed, out)?;
            let report = run_eval(&config, &ckpt, split.into())?;
            let eval = report
                .eval
                .as_ref()
                .expect("run_eval always attaches an evaluation block");
            Ok(format_ap_table(&eval.result, &eval.class_names))
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let start = Instant::now();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            println!("wall clock: {:.2}s", start.elapsed().as_secs_f64());
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
