//! The training loop: sampling, forward, loss, backward, SGD, periodic evaluation and
//! checkpointing. Batch `k` depends only on the seed and `k`, so a resumed run replays the
//! same trajectory as an uninterrupted one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::corpus::list_clip_dirs;
use crate::encoders::{init_model, Checkpoint, MlpSpec, Sgd, Standardizer, TwoStreamModel};
use crate::error::{Error, Result};
use crate::features::{load_feature_corpus, FeatureClip, MfccConfig, PreprocessOptions, AUDIO_FRAMES_PER_VIDEO_FRAME};
use crate::numeric::Matrix;
use crate::sampling::{Batch, BatchMode, Corpus, Sampler, SamplerConfig};
use crate::training::batch::{assemble, batch_loss, fingerprint, fnv1a, loss_and_gradients};
use crate::training::config::{LossKind, TrainConfig};
use crate::training::eval::{evaluate_ordering, OrderingRates};

/// Offset mixed into the seed for the held-out evaluation batches.
const EVAL_SEED_SALT: u64 = 0x6576_616c;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_LOG: &str = "eval_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const CONFIG_COPY: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub rates: OrderingRates,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    /// First evaluated step whose sync-vs-near-shift ordering rate reaches `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.evals.iter().find(|e| e.rates.sync_shift1 >= threshold).map(|e| e.step)
    }

    pub fn train_csv(&self) -> String {
        let mut s = String::from("step,loss,wall_ms\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.loss, r.wall_ms);
        }
        s
    }

    pub fn eval_csv(&self) -> String {
        let mut s = String::from("step,rate_sync_shift1,rate_shift1_shift2,rate_shift2_het,val_loss\n");
        for e in &self.evals {
            let r = e.rates;
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.step, r.sync_shift1, r.shift1_shift2, r.shift2_het, e.val_loss
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(TRAIN_LOG), &self.train_csv())?;
        write_file(&dir.join(EVAL_LOG), &self.eval_csv())
    }

    /// Reads logs written by [`TrainLog::write`]; missing files give empty logs.
    pub fn read(dir: &Path) -> Result<Self> {
        let rows = |name: &str| -> Result<Vec<Vec<String>>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(Vec::new());
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(text
                .lines()
                .skip(1)
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split(',').map(str::to_owned).collect())
                .collect())
        };
        let num = |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| Error::format("training log", format!("bad number {s:?}"))) };
        let int = |s: &str| -> Result<u64> { s.trim().parse().map_err(|_| Error::format("training log", format!("bad integer {s:?}"))) };
        let mut log = TrainLog::default();
        for r in rows(TRAIN_LOG)? {
            if r.len() != 3 {
                return Err(Error::format("training log", "expected 3 columns"));
            }
            log.steps.push(StepRecord {
                step: int(&r[0])?,
                loss: num(&r[1])?,
                wall_ms: int(&r[2])?,
            });
        }
        for r in rows(EVAL_LOG)? {
            if r.len() != 5 {
                return Err(Error::format("evaluation log", "expected 5 columns"));
            }
            log.evals.push(EvalRecord {
                step: int(&r[0])?,
                rates: OrderingRates {
                    sync_shift1: num(&r[1])?,
                    shift1_shift2: num(&r[2])?,
                    shift2_het: num(&r[3])?,
                },
                val_loss: num(&r[4])?,
            });
        }
        Ok(log)
    }

    fn truncate(&mut self, step: u64) {
        self.steps.retain(|r| r.step <= step);
        self.evals.retain(|r| r.step <= step);
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Splits clips into (train, validation). Validation takes the `⌈fraction·n⌉` clips (at least
/// two) with the smallest id hashes, so membership does not depend on clip order.
pub fn split_by_id_hash(clips: Vec<FeatureClip>, fraction: f64) -> Result<(Vec<FeatureClip>, Vec<FeatureClip>)> {
    let n = clips.len();
    let n_val = ((fraction * n as f64).ceil() as usize).max(2);
    if n_val + 2 > n {
        return Err(Error::config(format!(
            "{n} clips are too few to hold out {n_val} for validation and still train"
        )));
    }
    let mut keyed: Vec<(u64, FeatureClip)> = clips.into_iter().map(|c| (fnv1a(c.id.bytes()), c)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let train = keyed.split_off(n_val).into_iter().map(|(_, c)| c).collect();
    let val = keyed.into_iter().map(|(_, c)| c).collect();
    Ok((train, val))
}

fn tiled(norm: Standardizer, times: usize) -> Standardizer {
    Standardizer {
        shift: norm.shift.repeat(times),
        scale: norm.scale.repeat(times),
    }
}

/// Fresh encoders sized for the corpus, with input standardization fitted per video-frame
/// feature and per MFCC coefficient and tiled across the window.
pub fn build_model(config: &TrainConfig, train: &Corpus) -> Result<TwoStreamModel> {
    let w = config.sampler.width;
    let a = AUDIO_FRAMES_PER_VIDEO_FRAME * w;
    let (fd, nc) = (train.frame_dim(), train.n_coeffs());
    let mut model = init_model(
        MlpSpec::uniform(w * fd, config.hidden, config.layers, config.embedding_dim, config.seed),
        MlpSpec::uniform(a * nc, config.hidden, config.layers, config.embedding_dim, config.seed.wrapping_add(1)),
    )?;
    let frames: Vec<f64> = train.clips().iter().flat_map(|c| c.tracks.iter().flat_map(|t| t.data().iter().copied())).collect();
    let rows = frames.len() / fd;
    let video_norm = Standardizer::fit(&Matrix::new(rows, fd, frames)?)?;
    let mfcc: Vec<f64> = train.clips().iter().flat_map(|c| c.mfcc.data().iter().copied()).collect();
    let rows = mfcc.len() / nc;
    let audio_norm = Standardizer::fit(&Matrix::new(rows, nc, mfcc)?)?;
    model.video.set_input_norm(tiled(video_norm, w))?;
    model.audio.set_input_norm(tiled(audio_norm, a))?;
    Ok(model)
}

/// Loads every clip directory under the configured corpus root.
pub fn load_corpus_clips(root: &Path) -> Result<Vec<FeatureClip>> {
    let dirs = list_clip_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::config(format!("no clip directories under {}", root.display())));
    }
    load_feature_corpus(&dirs, &MfccConfig::default(), &PreprocessOptions::default())
}

pub struct Trainer {
    config: TrainConfig,
    train: Corpus,
    val: Corpus,
    sampler: Sampler,
    /// Multinomial-layout batches scored for ordering rates.
    ordering_batches: Vec<Batch>,
    /// Batches in the configured loss's layout, scored for validation loss.
    val_batches: Vec<Batch>,
    model: TwoStreamModel,
    optimizer: Sgd,
    step: u64,
    total_steps: u64,
    log: TrainLog,
    elapsed_ms: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, clips: Vec<FeatureClip>) -> Result<Self> {
        config.validate()?;
        let (train, val) = split_by_id_hash(clips, config.val_fraction)?;
        let train = Corpus::new(train)?;
        let val = Corpus::new(val)?;
        let sampler = Sampler::new(&train, config.sampler.clone())?;
        let eval_sampler = Sampler::new(
            &val,
            SamplerConfig {
                seed: config.seed ^ EVAL_SEED_SALT,
                ..config.sampler.clone()
            },
        )?;
        let per_batch = config.batch_size.max(2);
        let n_batches = config.eval_anchors.div_ceil(per_batch) as u64;
        let sample_eval = |mode| -> Result<Vec<Batch>> {
            (0..n_batches).map(|k| eval_sampler.sample(&val, per_batch, mode, k)).collect()
        };
        let ordering_batches = sample_eval(BatchMode::Multinomial)?;
        let val_batches = match config.loss {
            LossKind::Multinomial => ordering_batches.clone(),
            kind => sample_eval(kind.batch_mode())?,
        };
        let model = build_model(&config, &train)?;
        let optimizer = Sgd::new(config.lr, config.momentum)?;
        let total_steps = config.total_steps(train.len());
        Ok(Trainer {
            config,
            train,
            val,
            sampler,
            ordering_batches,
            val_batches,
            model,
            optimizer,
            step: 0,
            total_steps,
            log: TrainLog::default(),
            elapsed_ms: 0,
        })
    }

    /// Loads the corpus named by the config.
    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let clips = load_corpus_clips(&config.corpus)?;
        Trainer::new(config, clips)
    }

    /// Continues from a checkpoint; logs already in `out_dir` are kept up to its step.
    pub fn resume(config: TrainConfig, clips: Vec<FeatureClip>, checkpoint_dir: &Path) -> Result<Self> {
        let mut t = Trainer::new(config, clips)?;
        let ckpt = Checkpoint::load(checkpoint_dir)?;
        if ckpt.model.video.spec() != t.model.video.spec() || ckpt.model.audio.spec() != t.model.audio.spec() {
            return Err(Error::config("checkpoint architecture does not match the config"));
        }
        t.model = ckpt.model;
        t.optimizer.set_velocity(ckpt.velocity);
        t.step = ckpt.step;
        t.log = TrainLog::read(&t.config.out_dir)?;
        t.log.truncate(ckpt.step);
        t.elapsed_ms = t.log.steps.last().map_or(0, |r| r.wall_ms);
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &TwoStreamModel {
        &self.model
    }

    pub fn train_corpus(&self) -> &Corpus {
        &self.train
    }

    pub fn val_corpus(&self) -> &Corpus {
        &self.val
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// The batch the trainer will use for (zero-based) step `index`.
    pub fn batch(&self, index: u64) -> Result<Batch> {
        self.sampler
            .sample(&self.train, self.config.batch_size, self.config.loss.batch_mode(), index)
    }

    /// One SGD update; returns the loss of the batch before the update.
    pub fn step(&mut self) -> Result<f64> {
        let started = Instant::now();
        let batch = self.batch(self.step)?;
        let inputs = assemble(&batch)?;
        let (loss, grads) = loss_and_gradients(&self.model, &inputs, &self.config)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at step {} (batch fingerprint {:016x})",
                self.step + 1,
                fingerprint(&batch)
            )));
        }
        self.optimizer.step(&mut self.model, &grads)?;
        self.step += 1;
        self.elapsed_ms += started.elapsed().as_millis() as u64;
        let wall_ms = if self.config.record_wall_time { self.elapsed_ms } else { 0 };
        self.log.steps.push(StepRecord {
            step: self.step,
            loss,
            wall_ms,
        });
        Ok(loss)
    }

    pub fn evaluate(&self) -> Result<EvalRecord> {
        let m = &self.config.multinomial;
        let rates = evaluate_ordering(&self.model, &self.ordering_batches, m.m1, m.m2)?;
        let mut total = 0.0;
        for b in &self.val_batches {
            total += batch_loss(&self.model, &assemble(b)?, &self.config)?;
        }
        Ok(EvalRecord {
            step: self.step,
            rates,
            val_loss: total / self.val_batches.len() as f64,
        })
    }

    fn record_eval(&mut self) -> Result<()> {
        if self.log.evals.last().is_some_and(|e| e.step == self.step) {
            return Ok(());
        }
        let rec = self.evaluate()?;
        self.log.evals.push(rec);
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let meta: BTreeMap<String, String> = [
            ("loss", c.loss.name().to_string()),
            ("W", c.sampler.width.to_string()),
            ("T", c.sampler.shift_range.to_string()),
            ("frame_dim", self.train.frame_dim().to_string()),
            ("n_coeffs", self.train.n_coeffs().to_string()),
            ("seed", c.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Checkpoint {
            model: self.model.clone(),
            velocity: self.optimizer.velocity().cloned(),
            step: self.step,
            meta,
        }
    }

    /// Writes the checkpoint, logs and resolved config into `dir`. The checkpoint directory is
    /// replaced as a whole so a crash never leaves a half-written one behind.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let staging = dir.join(format!("{CHECKPOINT_DIR}.tmp"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        self.checkpoint().save(&staging)?;
        let target = dir.join(CHECKPOINT_DIR);
        if target.exists() {
            fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        }
        fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;
        self.log.write(dir)?;
        write_file(&dir.join(CONFIG_COPY), &self.config.to_kv().to_text())
    }

    /// Trains to the configured step budget, evaluating and saving to `out_dir` at step 0,
    /// every `eval_every` steps and at the end.
    pub fn run(&mut self) -> Result<TrainLog> {
        let out = self.config.out_dir.clone();
        self.run_until(self.total_steps, Some(&out))?;
        Ok(self.log.clone())
    }

    /// Like [`Trainer::run`] but stops after `until` steps; `out_dir = None` skips all writes.
    pub fn run_until(&mut self, until: u64, out_dir: Option<&Path>) -> Result<()> {
        let until = until.min(self.total_steps);
        let save = |t: &Trainer| out_dir.map_or(Ok(()), |d| t.save(d));
        if self.step == 0 || self.step.is_multiple_of(self.config.eval_every) {
            self.record_eval()?;
            save(self)?;
        }
        while self.step < until {
            self.step()?;
            if self.step.is_multiple_of(self.config.eval_every) || self.step == self.total_steps {
                self.record_eval()?;
                save(self)?;
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> TwoStreamModel {
        self.model
    }
}

/// Runs a full training job from a config: returns the final model and its log.
pub fn train(config: TrainConfig) -> Result<(TwoStreamModel, TrainLog)> {
    let mut trainer = Trainer::from_config(config)?;
    let log = trainer.run()?;
    Ok((trainer.into_model(), log))
}

/// Default location of the checkpoint written by a run into `out_dir`.
pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR)
}
