//! Synchronized, shifted and heterologous audio-video pairs, and the batch layouts each loss
//! consumes.
//!
//! Indices are in video frames. Audio windows start at `4 · video_frame` MFCC rows. A shift `j`
//! moves only the audio window; the visual segment stays put.

use std::cmp::Ordering;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureClip;

/// A validated set of feature clips sharing frame and MFCC dimensions.
#[derive(Debug, Clone)]
pub struct Corpus {
    clips: Vec<FeatureClip>,
}

impl Corpus {
    pub fn new(clips: Vec<FeatureClip>) -> Result<Self> {
        let first = clips.first().ok_or(Error::Empty("corpus"))?;
        let (d, c) = (first.frame_dim(), first.n_coeffs());
        if let Some(bad) = clips.iter().find(|k| k.frame_dim() != d || k.n_coeffs() != c) {
            return Err(Error::format(
                "corpus",
                format!("clip {} has frame dim {} / {} coeffs, expected {d} / {c}", bad.id, bad.frame_dim(), bad.n_coeffs()),
            ));
        }
        Ok(Corpus { clips })
    }

    pub fn clips(&self) -> &[FeatureClip] {
        &self.clips
    }

    pub fn clip(&self, i: usize) -> &FeatureClip {
        &self.clips[i]
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.clips[0].frame_dim()
    }

    pub fn n_coeffs(&self) -> usize {
        self.clips[0].n_coeffs()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.clips.iter().position(|c| c.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentIndex {
    pub clip: usize,
    pub track: usize,
    pub start: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Synchronized,
    /// Audio offset by `j ≠ 0` video frames.
    Shifted(i32),
    /// Audio from clip `source_clip` (a corpus index).
    Heterologous { source_clip: usize },
}

impl PairLabel {
    /// Distance rank of the pair relative to its anchor: synchronized 0, shift `|j|`,
    /// heterologous infinite (`None`).
    pub fn rank(&self) -> Option<u32> {
        match *self {
            PairLabel::Synchronized => Some(0),
            PairLabel::Shifted(j) => Some(j.unsigned_abs()),
            PairLabel::Heterologous { .. } => None,
        }
    }

    pub fn is_negative(&self) -> bool {
        !matches!(self, PairLabel::Synchronized)
    }
}

fn compare_rank(a: Option<u32>, b: Option<u32>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Roles {
    Ordered { positive: PairLabel, negative: PairLabel },
    NoOrder,
}

/// Orders two pairs of the same anchor: the lower-rank pair is the positive.
pub fn classify_roles(a: PairLabel, b: PairLabel) -> Roles {
    match compare_rank(a.rank(), b.rank()) {
        Ordering::Less => Roles::Ordered {
            positive: a,
            negative: b,
        },
        Ordering::Greater => Roles::Ordered {
            positive: b,
            negative: a,
        },
        Ordering::Equal => Roles::NoOrder,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvPair {
    pub segment: SegmentIndex,
    pub label: PairLabel,
    /// `width × frame_dim`
    pub video: Vec<f64>,
    /// `4 · width × n_coeffs`
    pub audio: Vec<f64>,
    pub audio_clip: usize,
    /// First MFCC row of the audio window.
    pub audio_start: usize,
}

fn check_segment<'a>(corpus: &'a Corpus, seg: &SegmentIndex) -> Result<&'a FeatureClip> {
    let clip = corpus
        .clips
        .get(seg.clip)
        .ok_or_else(|| Error::arg(format!("clip index {} out of range", seg.clip)))?;
    if seg.track >= clip.tracks.len() {
        return Err(Error::arg(format!("track {} out of range", seg.track)));
    }
    if seg.width == 0 || seg.start + seg.width > clip.usable_frames() {
        return Err(Error::arg(format!(
            "segment [{}, {}) outside {} usable frames",
            seg.start,
            seg.start + seg.width,
            clip.usable_frames()
        )));
    }
    Ok(clip)
}

/// Cuts the visual segment and the audio window `label` calls for.
pub fn cut_pair<R: Rng>(corpus: &Corpus, seg: &SegmentIndex, label: PairLabel, rng: &mut R) -> Result<AvPair> {
    let clip = check_segment(corpus, seg)?;
    let (audio_clip, audio_frame) = match label {
        PairLabel::Synchronized => (seg.clip, seg.start),
        PairLabel::Shifted(0) => return Err(Error::arg("shift of 0 is not a shifted pair")),
        PairLabel::Shifted(j) => {
            let s = seg.start as i64 + j as i64;
            if s < 0 || s as usize + seg.width > clip.usable_frames() {
                return Err(Error::arg(format!("shift {j} leaves the clip")));
            }
            (seg.clip, s as usize)
        }
        PairLabel::Heterologous { source_clip } => {
            if source_clip == seg.clip {
                return Err(Error::arg("heterologous audio must come from another clip"));
            }
            let src = corpus
                .clips
                .get(source_clip)
                .ok_or_else(|| Error::arg(format!("clip index {source_clip} out of range")))?;
            if src.usable_frames() < seg.width {
                return Err(Error::arg(format!("clip {} shorter than the segment", src.id)));
            }
            (source_clip, rng.random_range(0..=src.usable_frames() - seg.width))
        }
    };
    Ok(AvPair {
        segment: *seg,
        label,
        video: clip.video_window(seg.track, seg.start, seg.width),
        audio: corpus.clips[audio_clip].audio_window(audio_frame, seg.width),
        audio_clip,
        audio_start: audio_frame * crate::features::AUDIO_FRAMES_PER_VIDEO_FRAME,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Contrastive,
    Triplet,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeterologousSource {
    MiniBatch,
    Corpus,
}

/// Which face track anchors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPolicy {
    /// The labelled active speaker, with the segment inside one turn.
    ActiveTrack,
    /// Any track at any position.
    AnyTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub shift_range: usize,
    pub width: usize,
    pub heterologous_from: HeterologousSource,
    pub anchor_policy: AnchorPolicy,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            shift_range: 10,
            width: 5,
            heterologous_from: HeterologousSource::MiniBatch,
            anchor_policy: AnchorPolicy::ActiveTrack,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift_range == 0 || self.width == 0 {
            return Err(Error::config("shift range T and window W must be at least 1"));
        }
        Ok(())
    }

    /// `{-T, …, -1, 1, …, T}`
    pub fn shifts(&self) -> Vec<i32> {
        let t = self.shift_range as i32;
        (-t..=t).filter(|&j| j != 0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    pub pair: AvPair,
    pub synchronized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub segment: SegmentIndex,
    pub video: Vec<f64>,
    pub positive: AvPair,
    pub negative: AvPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialAnchor {
    pub segment: SegmentIndex,
    pub video: Vec<f64>,
    pub synchronized: Vec<f64>,
    /// Every `j` in `{-T..T} \ {0}`, in ascending order.
    pub shifted: Vec<(i32, Vec<f64>)>,
    /// Indices of the other anchors whose synchronized audio serves as this anchor's
    /// heterologous audio (always from a different clip).
    pub heterologous: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Contrastive(Vec<ContrastivePair>),
    Triplet(Vec<TripletSample>),
    Multinomial(Vec<MultinomialAnchor>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Contrastive(b) => b.len(),
            Batch::Triplet(b) => b.len(),
            Batch::Multinomial(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> BatchMode {
        match self {
            Batch::Contrastive(_) => BatchMode::Contrastive,
            Batch::Triplet(_) => BatchMode::Triplet,
            Batch::Multinomial(_) => BatchMode::Multinomial,
        }
    }

    /// Anchor segments, in batch order.
    pub fn segments(&self) -> Vec<SegmentIndex> {
        match self {
            Batch::Contrastive(b) => b.iter().map(|p| p.pair.segment).collect(),
            Batch::Triplet(b) => b.iter().map(|t| t.segment).collect(),
            Batch::Multinomial(b) => b.iter().map(|a| a.segment).collect(),
        }
    }
}

/// Draws batches from a corpus. Each batch is a pure function of the corpus, the config and
/// the batch index.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    /// Per clip: every `(track, start)` usable as an anchor with the full shift range in-clip.
    anchors: Vec<Vec<(usize, usize)>>,
    /// Clips that have at least one anchor.
    anchor_clips: Vec<usize>,
}

impl Sampler {
    pub fn new(corpus: &Corpus, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let (t, w) = (config.shift_range, config.width);
        let anchors: Vec<Vec<(usize, usize)>> = corpus
            .clips
            .iter()
            .map(|clip| {
                let usable = clip.usable_frames();
                if usable < w + 2 * t {
                    return Ok(Vec::new());
                }
                let starts = t..=usable - w - t;
                Ok(match config.anchor_policy {
                    AnchorPolicy::AnyTrack => (0..clip.tracks.len())
                        .flat_map(|k| starts.clone().map(move |s| (k, s)))
                        .collect(),
                    AnchorPolicy::ActiveTrack => {
                        let labels = clip.labels.as_ref().ok_or_else(|| {
                            Error::config(format!(
                                "clip {} has no labels; use anchor_policy = any",
                                clip.id
                            ))
                        })?;
                        starts
                            .filter(|&s| labels[s..s + w].iter().all(|&l| l == labels[s]))
                            .map(|s| (labels[s], s))
                            .collect()
                    }
                })
            })
            .collect::<Result<_>>()?;
        let anchor_clips: Vec<usize> = (0..anchors.len()).filter(|&i| !anchors[i].is_empty()).collect();
        if anchor_clips.is_empty() {
            return Err(Error::config(format!(
                "no clip is long enough for W = {w} with shifts up to T = {t}"
            )));
        }
        Ok(Sampler {
            config,
            anchors,
            anchor_clips,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn anchor_clip_count(&self) -> usize {
        self.anchor_clips.len()
    }

    fn rng(&self, batch_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(batch_index);
        rng
    }

    fn anchor_in(&self, clip: usize, rng: &mut ChaCha8Rng) -> SegmentIndex {
        let list = &self.anchors[clip];
        let (track, start) = list[rng.random_range(0..list.len())];
        SegmentIndex {
            clip,
            track,
            start,
            width: self.config.width,
        }
    }

    fn random_anchor(&self, rng: &mut ChaCha8Rng) -> SegmentIndex {
        let clip = self.anchor_clips[rng.random_range(0..self.anchor_clips.len())];
        self.anchor_in(clip, rng)
    }

    fn random_shift(&self, rng: &mut ChaCha8Rng) -> i32 {
        let t = self.config.shift_range as i32;
        let j = rng.random_range(1..=t);
        if rng.random_bool(0.5) {
            j
        } else {
            -j
        }
    }

    fn heterologous_clip(&self, corpus: &Corpus, anchor_clip: usize, batch_clips: &[usize], rng: &mut ChaCha8Rng) -> Result<usize> {
        let candidates: Vec<usize> = match self.config.heterologous_from {
            HeterologousSource::MiniBatch => batch_clips.iter().copied().filter(|&c| c != anchor_clip).collect(),
            HeterologousSource::Corpus => (0..corpus.len()).filter(|&c| c != anchor_clip).collect(),
        };
        candidates
            .choose(rng)
            .copied()
            .ok_or_else(|| Error::config("heterologous pairs need at least two clips"))
    }

    pub fn sample(&self, corpus: &Corpus, batch_size: usize, mode: BatchMode, batch_index: u64) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        let mut rng = self.rng(batch_index);
        match mode {
            BatchMode::Contrastive => self.contrastive(corpus, batch_size, &mut rng).map(Batch::Contrastive),
            BatchMode::Triplet => self.triplet(corpus, batch_size, &mut rng).map(Batch::Triplet),
            BatchMode::Multinomial => self.multinomial(corpus, batch_size, &mut rng).map(Batch::Multinomial),
        }
    }

    /// Even positions are synchronized; odd positions are negatives, shifted or heterologous
    /// with equal probability.
    fn contrastive(&self, corpus: &Corpus, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ContrastivePair>> {
        let segments: Vec<SegmentIndex> = (0..n).map(|_| self.random_anchor(rng)).collect();
        let clips: Vec<usize> = segments.iter().map(|s| s.clip).collect();
        let mut out = Vec::with_capacity(n);
        for (i, seg) in segments.iter().enumerate() {
            let label = if i % 2 == 0 {
                PairLabel::Synchronized
            } else if rng.random_bool(0.5) {
                PairLabel::Shifted(self.random_shift(rng))
            } else {
                PairLabel::Heterologous {
                    source_clip: self.heterologous_clip(corpus, seg.clip, &clips, rng)?,
                }
            };
            out.push(ContrastivePair {
                pair: cut_pair(corpus, seg, label, rng)?,
                synchronized: i % 2 == 0,
            });
        }
        Ok(out)
    }

    /// Table cases drawn uniformly: (sync, shift), (small shift, large shift),
    /// (shift, heterologous).
    fn triplet(&self, corpus: &Corpus, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TripletSample>> {
        let segments: Vec<SegmentIndex> = (0..n).map(|_| self.random_anchor(rng)).collect();
        let clips: Vec<usize> = segments.iter().map(|s| s.clip).collect();
        let shifts = self.config.shifts();
        let mut out = Vec::with_capacity(n);
        for seg in &segments {
            let case = if self.config.shift_range >= 2 {
                rng.random_range(0..3)
            } else {
                // a single |j| leaves no Case-2 pair
                [0, 2][rng.random_range(0..2)]
            };
            let (a, b) = match case {
                0 => (PairLabel::Synchronized, PairLabel::Shifted(self.random_shift(rng))),
                1 => loop {
                    let picked: Vec<i32> = shifts.choose_multiple(rng, 2).copied().collect();
                    if picked[0].abs() != picked[1].abs() {
                        break (PairLabel::Shifted(picked[0]), PairLabel::Shifted(picked[1]));
                    }
                },
                _ => (
                    PairLabel::Shifted(self.random_shift(rng)),
                    PairLabel::Heterologous {
                        source_clip: self.heterologous_clip(corpus, seg.clip, &clips, rng)?,
                    },
                ),
            };
            let Roles::Ordered { positive, negative } = classify_roles(a, b) else {
                unreachable!("sampled cases always have distinct ranks");
            };
            let positive = cut_pair(corpus, seg, positive, rng)?;
            let negative = cut_pair(corpus, seg, negative, rng)?;
            out.push(TripletSample {
                segment: *seg,
                video: positive.video.clone(),
                positive,
                negative,
            });
        }
        Ok(out)
    }

    /// One anchor per clip where possible; each anchor gets its synchronized audio, the full
    /// shift set, and the synchronized audio of every anchor from another clip.
    fn multinomial(&self, corpus: &Corpus, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<MultinomialAnchor>> {
        if n < 2 {
            return Err(Error::arg("multinomial batches need at least two anchors"));
        }
        if self.anchor_clips.len() < 2 {
            return Err(Error::config("multinomial batches need anchors from at least two clips"));
        }
        let mut order = self.anchor_clips.clone();
        order.shuffle(rng);
        let clips: Vec<usize> = order.iter().copied().cycle().take(n).collect();
        let segments: Vec<SegmentIndex> = clips.iter().map(|&c| self.anchor_in(c, rng)).collect();
        let shifts = self.config.shifts();
        let mut out = Vec::with_capacity(n);
        for (i, seg) in segments.iter().enumerate() {
            let sync = cut_pair(corpus, seg, PairLabel::Synchronized, rng)?;
            let shifted = shifts
                .iter()
                .map(|&j| Ok((j, cut_pair(corpus, seg, PairLabel::Shifted(j), rng)?.audio)))
                .collect::<Result<Vec<_>>>()?;
            let heterologous = (0..n).filter(|&m| m != i && clips[m] != seg.clip).collect();
            out.push(MultinomialAnchor {
                segment: *seg,
                video: sync.video,
                synchronized: sync.audio,
                shifted,
                heterologous,
            });
        }
        Ok(out)
    }
}

/// One-off convenience over [`Sampler`].
pub fn sample_batch(corpus: &Corpus, config: &SamplerConfig, batch_size: usize, mode: BatchMode, batch_index: u64) -> Result<Batch> {
    Sampler::new(corpus, config.clone())?.sample(corpus, batch_size, mode, batch_index)
}
