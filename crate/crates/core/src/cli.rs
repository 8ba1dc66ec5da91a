//! The `avsync` command line. Results go to stdout as `key=value` lines; progress and errors
//! go to stderr. Exit codes: 0 success, 2 usage, IO or validation error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::corpus::{list_clip_dirs, read_clip_dir, write_synthetic_corpus, SyntheticSpec};
use crate::diarization::{self, DEFAULT_SMOOTHING};
use crate::encoders::{Checkpoint, TwoStreamModel};
use crate::error::{Error, Result};
use crate::features::{
    extract_clip_features, load_feature_clip, write_feature_files, FeatureClip, MfccConfig, PreprocessOptions,
};
use crate::kv::KeyValues;
use crate::training::trainer::{checkpoint_path, load_corpus_clips};
use crate::training::{run_gradcheck, GradCheckConfig, LossKind, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "avsync", version, about = "Audio-visual synchronization learning for speaker diarization")]
struct Cli {
    /// Worker threads for parallel sections (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Contrastive,
    Triplet,
    Multinomial,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    SoftHinge,
    Plain,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus described by a key=value spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute MFCC and per-frame video features for every clip directory under a corpus root.
    ExtractFeatures {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the config's output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Per-frame distances and speaker assignment for one clip.
    Diarize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Median filter length in frames (odd).
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        window: usize,
    },
    /// Score a hypothesis CSV against a reference CSV.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Export raw and smoothed per-frame distances for one clip as CSV.
    Distances {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        window: usize,
    },
    /// Finite-difference checks of end-to-end parameter gradients.
    Gradcheck {
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multinomial loss form.
        #[arg(long, value_enum, default_value_t = FormArg::SoftHinge)]
        form: FormArg,
    },
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build();
    let outcome = match pool {
        Ok(pool) => pool.install(|| execute(cli.command, stdout, stderr)),
        Err(e) => Err(Error::config(format!("thread pool: {e}"))),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

macro_rules! emit {
    ($w:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(out_err)?
    };
}

fn execute(command: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32> {
    match command {
        Command::Generate { spec, out: dir, seed } => {
            let kv = KeyValues::load(&spec)?;
            let mut spec = SyntheticSpec::from_kv(&kv)?;
            kv.reject_unknown()?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let dirs = write_synthetic_corpus(&spec, &dir)?;
            emit!(out, "clips={}", dirs.len());
            emit!(out, "out={}", dir.display());
        }
        Command::ExtractFeatures { corpus } => {
            let dirs = list_clip_dirs(&corpus)?;
            if dirs.is_empty() {
                return Err(Error::config(format!("no clip directories under {}", corpus.display())));
            }
            let mut frames = 0;
            for d in &dirs {
                let clip = extract_clip_features(&read_clip_dir(d)?, &MfccConfig::default(), &PreprocessOptions::default())?;
                frames += clip.frame_count();
                write_feature_files(d, &clip)?;
            }
            emit!(out, "clips={}", dirs.len());
            emit!(out, "video_frames={frames}");
        }
        Command::Train { config, seed, resume } => train(&config, seed, resume, out, err)?,
        Command::Diarize {
            model,
            clip,
            out: dir,
            window,
        } => {
            let (model, width) = load_model(&model)?;
            let clip = load_clip(&clip)?;
            let result = diarization::diarize(&model, &clip, width, window)?;
            diarization::write_outputs(&dir, &result)?;
            emit!(out, "frames={}", result.labels.len());
            emit!(out, "tracks={}", result.raw.tracks());
            emit!(out, "distances={}", dir.join("distances.csv").display());
            emit!(out, "hypothesis={}", dir.join("hypothesis.csv").display());
            if let Some(reference) = &clip.labels {
                emit!(out, "der={}", diarization::der(reference, &result.labels)?);
                emit!(out, "f1={}", diarization::f1(reference, &result.labels)?);
            }
        }
        Command::Evaluate { reference, hyp } => {
            let r = diarization::read_track_csv(&reference)?;
            let h = diarization::read_track_csv(&hyp)?;
            let (der, f1) = (diarization::der(&r, &h)?, diarization::f1(&r, &h)?);
            emit!(out, "frames={}", r.len());
            emit!(out, "der={der}");
            emit!(out, "f1={f1}");
            emit!(out, "summary=DER {:.1}% F1 {:.1}%", 100.0 * der, 100.0 * f1);
        }
        Command::Distances {
            model,
            clip,
            out: path,
            window,
        } => {
            let (model, width) = load_model(&model)?;
            let clip = load_clip(&clip)?;
            let raw = diarization::compute_distances(&model, &clip, width)?;
            let smoothed = diarization::smooth(&raw, window)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, diarization::distances_csv(&raw, &smoothed)?).map_err(|e| Error::io(&path, e))?;
            emit!(out, "frames={}", raw.frames());
            emit!(out, "tracks={}", raw.tracks());
            emit!(out, "out={}", path.display());
        }
        Command::Gradcheck { loss, trials, seed, form } => {
            let kinds = match loss {
                LossArg::Contrastive => vec![LossKind::Contrastive],
                LossArg::Triplet => vec![LossKind::Triplet],
                LossArg::Multinomial => vec![LossKind::Multinomial],
                LossArg::All => vec![LossKind::Contrastive, LossKind::Triplet, LossKind::Multinomial],
            };
            let cfg = GradCheckConfig {
                trials,
                seed,
                soft_hinge: matches!(form, FormArg::SoftHinge),
                ..GradCheckConfig::default()
            };
            let mut all_passed = true;
            for kind in kinds {
                let reports = run_gradcheck(kind, &cfg)?;
                let passed = reports.iter().filter(|r| r.passed()).count();
                let worst = reports.iter().map(|r| r.report.max_rel_error()).fold(0.0, f64::max);
                for r in reports.iter().filter(|r| !r.passed()) {
                    for c in r.report.failures() {
                        let _ = writeln!(
                            err,
                            "{} trial {} parameter {}: analytic {} numeric {}",
                            kind.name(),
                            r.trial,
                            c.index,
                            c.analytic,
                            c.numeric
                        );
                    }
                }
                all_passed &= passed == trials;
                emit!(
                    out,
                    "loss={} passed={passed}/{trials} max_rel_error={worst:.3e} result={}",
                    kind.name(),
                    if passed == trials { "pass" } else { "fail" }
                );
            }
            if !all_passed {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(EXIT_OK)
}

fn train(path: &Path, seed: Option<u64>, resume: bool, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    let mut config = TrainConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
        config.sampler.seed = s;
    }
    let _ = writeln!(err, "loading corpus from {}", config.corpus.display());
    let clips = load_corpus_clips(&config.corpus)?;
    let ckpt = checkpoint_path(&config.out_dir);
    let mut trainer = if resume && ckpt.exists() {
        Trainer::resume(config, clips, &ckpt)?
    } else {
        Trainer::new(config, clips)?
    };
    let _ = writeln!(
        err,
        "training {} steps on {} clips ({} held out)",
        trainer.total_steps(),
        trainer.train_corpus().len(),
        trainer.val_corpus().len()
    );
    let log = trainer.run()?;
    let last_eval = log.evals.last().ok_or(Error::Empty("evaluation log"))?;
    emit!(out, "steps={}", trainer.steps_done());
    if let Some(s) = log.steps.last() {
        emit!(out, "final_loss={}", s.loss);
    }
    emit!(out, "rate_sync_shift1={}", last_eval.rates.sync_shift1);
    emit!(out, "rate_shift1_shift2={}", last_eval.rates.shift1_shift2);
    emit!(out, "rate_shift2_het={}", last_eval.rates.shift2_het);
    emit!(out, "val_loss={}", last_eval.val_loss);
    match log.steps_to_threshold(0.9) {
        Some(s) => emit!(out, "steps_to_threshold={s}"),
        None => emit!(out, "steps_to_threshold=none"),
    }
    emit!(out, "checkpoint={}", checkpoint_path(&trainer.config().out_dir).display());
    Ok(())
}

/// Loads a checkpoint and its window width.
fn load_model(dir: &Path) -> Result<(TwoStreamModel, usize)> {
    let ckpt = Checkpoint::load(dir)?;
    let width = ckpt
        .meta
        .get("W")
        .ok_or_else(|| Error::format("checkpoint", "missing window width W"))?
        .parse()
        .map_err(|_| Error::format("checkpoint", "window width W is not an integer"))?;
    Ok((ckpt.model, width))
}

fn load_clip(dir: &Path) -> Result<FeatureClip> {
    load_feature_clip(dir, &MfccConfig::default(), &PreprocessOptions::default())
}
