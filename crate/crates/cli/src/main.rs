//! `umt`: synthesize data, train, evaluate, predict and run diagnostics.
//!
//! Failures print one JSON line on stderr,
//! `{"error":"<kind>","message":"<text>"}`, and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use umt_core::checkpoint;
use umt_core::decoding::{write_predictions, CenterMode};
use umt_core::diagnostics::{bench_attention, full_model_gradcheck};
use umt_core::features_io::{load_dataset, synthesize_dataset, write_dataset};
use umt_core::metrics::Tasks;
use umt_core::trainer::{evaluate, predict, Trainer};
use umt_core::{RngState, RunConfig, Umt, UmtError, VideoSample};

#[derive(Parser)]
#[command(name = "umt", version, about = "Joint moment retrieval and highlight detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; every section and key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed taken from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (synth, train) or file (everything else).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `[synth]` section.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write `model.ckpt` and `history.json`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint and write the report as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// mr, hd or both.
        #[arg(long, default_value = "both")]
        tasks: Tasks,
        #[arg(long)]
        center_mode: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write JSON-lines predictions for every sample.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        center_mode: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Multiply-accumulate counts of bottleneck versus full cross attention.
    BenchAttn {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, UmtError> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), UmtError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| UmtError::InvalidArgument(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), UmtError> {
    fs::create_dir_all(path).map_err(|e| UmtError::InvalidArgument(format!("cannot create {}: {e}", path.display())))
}

fn apply_decode_overrides(cfg: &mut RunConfig, center_mode: Option<String>, top_k: Option<usize>) -> Result<(), UmtError> {
    if let Some(m) = center_mode {
        cfg.decode.center_mode = match m.as_str() {
            "local_maxima" => CenterMode::LocalMaxima,
            "all_clips" => CenterMode::AllClips,
            other => return Err(UmtError::InvalidArgument(format!("unknown center mode {other:?}"))),
        };
    }
    if let Some(k) = top_k {
        cfg.decode.top_k = k;
    }
    Ok(())
}

/// Feature widths come from the data so configs need not repeat them.
fn fit_dims(cfg: &mut RunConfig, data: &[VideoSample]) {
    let Some(first) = data.first() else { return };
    if let Some(v) = &first.visual {
        cfg.model.visual_dim = v.dim();
    }
    if let Some(a) = &first.audio {
        cfg.model.audio_dim = a.dim();
    }
    if let Some(t) = &first.text {
        cfg.model.text_dim = t.dim();
    }
}

fn run(cli: Cli) -> Result<(), UmtError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            let data = synthesize_dataset(&cfg.synth, &mut RngState::new(seed))?;
            create_dir(&common.out)?;
            let manifest = write_dataset(&common.out, &data, cfg.synth.positive_threshold)?;
            println!("{}", manifest.display());
        }
        Command::Train { common, data } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let dataset = load_dataset(&data)?;
            fit_dims(&mut cfg, &dataset);
            let mut model = Umt::new(cfg.model.clone(), cfg.train.seed)?;
            create_dir(&common.out)?;
            let mut trainer = Trainer::new(&model, cfg.train.clone())?;
            let history = trainer.train(&mut model, &dataset, Some(&common.out), None)?;
            write_json(&common.out.join("history.json"), &history)?;
            fs::write(common.out.join("config.toml"), cfg.to_toml_string()?)
                .map_err(|e| UmtError::InvalidArgument(format!("cannot write config: {e}")))?;
            let last = history.epochs.last().map(|e| e.loss).unwrap_or(f64::NAN);
            info!("trained {} epochs, final loss {last:.6}", history.epochs.len());
            println!("{}", common.out.join("model.ckpt").display());
        }
        Command::Eval {
            common,
            data,
            checkpoint: ckpt,
            tasks,
            center_mode,
            top_k,
        } => {
            let mut cfg = load_config(&common)?;
            apply_decode_overrides(&mut cfg, center_mode, top_k)?;
            let model = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let report = evaluate(&model, &dataset, tasks, &cfg.decode)?;
            write_json(&common.out, &report)?;
            print!("{}", report.to_table());
        }
        Command::Predict {
            common,
            data,
            checkpoint: ckpt,
            center_mode,
            top_k,
        } => {
            let mut cfg = load_config(&common)?;
            apply_decode_overrides(&mut cfg, center_mode, top_k)?;
            let model = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let records = predict(&model, &dataset, &cfg.decode)?;
            write_predictions(&common.out, &records)?;
            println!("{}", common.out.display());
        }
        Command::Gradcheck { common } => {
            let cfg = load_config(&common)?;
            let report = full_model_gradcheck(&cfg.gradcheck, common.seed.unwrap_or(0))?;
            write_json(&common.out, &report)?;
            println!(
                "checked {} parameters, max relative error {:.3e} (tolerance {:.0e})",
                report.checked, report.max_rel_error, report.tolerance
            );
            if !report.passed() {
                return Err(UmtError::InvalidArgument(format!(
                    "gradient check failed on {} parameters",
                    report.failures.len()
                )));
            }
        }
        Command::BenchAttn { common } => {
            let cfg = load_config(&common)?;
            let report = bench_attention(&cfg.bench, common.seed.unwrap_or(0))?;
            write_json(&common.out, &report)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
