use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::losses::{ContrastiveConfig, MultinomialConfig, TripletConfig};
use crate::sampling::{AnchorPolicy, BatchMode, HeterologousSource, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Triplet,
    Multinomial,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "multinomial" => Ok(LossKind::Multinomial),
            other => Err(Error::config(format!(
                "unknown loss {other:?} (expected contrastive, triplet or multinomial)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Multinomial => "multinomial",
        }
    }

    pub fn batch_mode(&self) -> BatchMode {
        match self {
            LossKind::Contrastive => BatchMode::Contrastive,
            LossKind::Triplet => BatchMode::Triplet,
            LossKind::Multinomial => BatchMode::Multinomial,
        }
    }
}

/// Every training setting. Loaded from a flat `key = value` file; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub contrastive: ContrastiveConfig,
    pub triplet: TripletConfig,
    pub multinomial: MultinomialConfig,
    pub sampler: SamplerConfig,
    pub batch_size: usize,
    pub steps: u64,
    /// Overrides `steps` with `epochs · ⌈train clips / batch_size⌉` when set.
    pub epochs: Option<u64>,
    pub lr: f64,
    pub momentum: f64,
    pub eval_every: u64,
    /// Anchors scored by each ordering evaluation.
    pub eval_anchors: usize,
    pub val_fraction: f64,
    pub hidden: usize,
    pub layers: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    /// When off, `wall_ms` is logged as 0 so logs depend only on the config.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Multinomial,
            contrastive: ContrastiveConfig::default(),
            triplet: TripletConfig::default(),
            multinomial: MultinomialConfig {
                soft_hinge: true,
                ..MultinomialConfig::default()
            },
            sampler: SamplerConfig::default(),
            batch_size: 16,
            steps: 2000,
            epochs: None,
            lr: 1e-3,
            momentum: 0.9,
            eval_every: 100,
            eval_anchors: 128,
            val_fraction: 0.1,
            hidden: 256,
            layers: 6,
            embedding_dim: 64,
            seed: 0,
            corpus: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        self.triplet.validate()?;
        self.multinomial.validate()?;
        self.sampler.validate()?;
        if self.multinomial.m2 as usize > self.sampler.shift_range && self.loss == LossKind::Multinomial {
            return Err(Error::config(format!(
                "m2 = {} exceeds the shift range T = {}; the far-shift group would be partly empty",
                self.multinomial.m2, self.sampler.shift_range
            )));
        }
        if self.batch_size == 0 || (self.loss == LossKind::Multinomial && self.batch_size < 2) {
            return Err(Error::config("batch_size must be at least 2 for the multinomial loss and at least 1 otherwise"));
        }
        if self.eval_every == 0 || self.eval_anchors < 2 {
            return Err(Error::config("eval_every must be positive and eval_anchors at least 2"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must be in (0, 1)"));
        }
        if self.hidden == 0 || self.layers == 0 || self.embedding_dim == 0 {
            return Err(Error::config("hidden, layers and embedding_dim must be positive"));
        }
        crate::encoders::Sgd::new(self.lr, self.momentum).map(|_| ())
    }

    /// Reads a config, resolving relative `corpus` and `out_dir` paths against `base`.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self> {
        let d = TrainConfig::default();
        let loss = match kv.raw("loss") {
            Some(s) => LossKind::parse(s)?,
            None => d.loss,
        };
        let alpha = kv.get("alpha")?;
        let soft_hinge = match kv.raw("multinomial_form") {
            None => d.multinomial.soft_hinge,
            Some("soft_hinge") => true,
            Some("plain") => false,
            Some(other) => return Err(Error::config(format!("multinomial_form {other:?} is not soft_hinge or plain"))),
        };
        let anchor_policy = match kv.raw("anchor_policy") {
            None | Some("active") => AnchorPolicy::ActiveTrack,
            Some("any") => AnchorPolicy::AnyTrack,
            Some(other) => return Err(Error::config(format!("anchor_policy {other:?} is not active or any"))),
        };
        let heterologous_from = match kv.raw("heterologous_from") {
            None | Some("mini-batch") | Some("batch") => HeterologousSource::MiniBatch,
            Some("corpus") => HeterologousSource::Corpus,
            Some(other) => return Err(Error::config(format!("heterologous_from {other:?} is not mini-batch or corpus"))),
        };
        let seed = kv.get_or("seed", d.seed)?;
        let batch_size = kv.get_or("batch_size", d.batch_size)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let cfg = TrainConfig {
            loss,
            contrastive: ContrastiveConfig {
                alpha: alpha.unwrap_or(d.contrastive.alpha),
            },
            triplet: TripletConfig {
                alpha: alpha.unwrap_or(d.triplet.alpha),
            },
            multinomial: MultinomialConfig {
                m1: kv.get_or("m1", d.multinomial.m1)?,
                m2: kv.get_or("m2", d.multinomial.m2)?,
                alpha1: kv.get_or("alpha1", d.multinomial.alpha1)?,
                alpha2: kv.get_or("alpha2", d.multinomial.alpha2)?,
                alpha3: kv.get_or("alpha3", d.multinomial.alpha3)?,
                squared_distance: kv.get_or("squared_distance", d.multinomial.squared_distance)?,
                soft_hinge,
            },
            sampler: SamplerConfig {
                shift_range: kv.get_or("T", d.sampler.shift_range)?,
                width: kv.get_or("W", d.sampler.width)?,
                heterologous_from,
                anchor_policy,
                seed,
            },
            batch_size,
            steps: kv.get_or("steps", d.steps)?,
            epochs: kv.get("epochs")?,
            lr: kv.get_or("lr", d.lr)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            eval_every: kv.get_or("eval_every", d.eval_every)?,
            eval_anchors: kv.get_or("eval_anchors", d.eval_anchors)?,
            val_fraction: kv.get_or("val_fraction", d.val_fraction)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            layers: kv.get_or("layers", d.layers)?,
            embedding_dim: kv.get_or("embedding_dim", d.embedding_dim)?,
            seed,
            corpus: resolve(kv.get_or("corpus", d.corpus)?),
            out_dir: resolve(kv.get("out_dir")?.or(kv.get("checkpoint_dir")?).unwrap_or(d.out_dir)),
            record_wall_time: kv.get_or("record_wall_time", d.record_wall_time)?,
        };
        if cfg.epochs.is_some() && kv.raw("steps").is_some() {
            return Err(Error::config("give either steps or epochs, not both"));
        }
        kv.reject_unknown()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_steps(&self, train_clips: usize) -> u64 {
        match self.epochs {
            Some(e) => e * train_clips.div_ceil(self.batch_size) as u64,
            None => self.steps,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        TrainConfig::from_kv(&kv, base)
    }

    /// Canonical text form; parsing it back gives the same config.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("loss", self.loss.name());
        kv.insert(
            "alpha",
            match self.loss {
                LossKind::Triplet => self.triplet.alpha,
                _ => self.contrastive.alpha,
            },
        );
        let m = &self.multinomial;
        kv.insert("m1", m.m1);
        kv.insert("m2", m.m2);
        kv.insert("alpha1", m.alpha1);
        kv.insert("alpha2", m.alpha2);
        kv.insert("alpha3", m.alpha3);
        kv.insert("squared_distance", m.squared_distance);
        kv.insert("multinomial_form", if m.soft_hinge { "soft_hinge" } else { "plain" });
        kv.insert("T", self.sampler.shift_range);
        kv.insert("W", self.sampler.width);
        kv.insert(
            "anchor_policy",
            match self.sampler.anchor_policy {
                AnchorPolicy::ActiveTrack => "active",
                AnchorPolicy::AnyTrack => "any",
            },
        );
        kv.insert(
            "heterologous_from",
            match self.sampler.heterologous_from {
                HeterologousSource::MiniBatch => "mini-batch",
                HeterologousSource::Corpus => "corpus",
            },
        );
        kv.insert("batch_size", self.batch_size);
        match self.epochs {
            Some(e) => kv.insert("epochs", e),
            None => kv.insert("steps", self.steps),
        }
        kv.insert("lr", self.lr);
        kv.insert("momentum", self.momentum);
        kv.insert("eval_every", self.eval_every);
        kv.insert("eval_anchors", self.eval_anchors);
        kv.insert("val_fraction", self.val_fraction);
        kv.insert("hidden", self.hidden);
        kv.insert("layers", self.layers);
        kv.insert("embedding_dim", self.embedding_dim);
        kv.insert("seed", self.seed);
        kv.insert("corpus", self.corpus.display());
        kv.insert("out_dir", self.out_dir.display());
        kv.insert("record_wall_time", self.record_wall_time);
        kv
    }
}
