//! Synthetic multi-speaker clips whose audio is driven by the active speaker's face motion.
//!
//! Every speaker owns a latent trajectory: a constant identity offset plus unit-variance white
//! noise smoothed by a moving average over a few video frames. Speakers take contiguous turns.
//! The active speaker's latent, plus independent noise, modulates the amplitudes of a bank of
//! tones (one tone per latent channel, each centred on its own mel band), so log-mel energies and
//! hence MFCCs track the latent. Each face track carries its own latent plus independent noise,
//! either directly as per-frame feature vectors or rendered as low-frequency intensity patterns
//! on the lower half of a 112×112 face crop.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::clip::{write_clip_dir, Clip, Image, Track};
use crate::corpus::wav::Waveform;
use crate::error::{Error, Result};
use crate::features::mfcc::{hz_to_mel, mel_to_hz};
use crate::kv::KeyValues;
use crate::numeric::Matrix;

/// Extra audio appended so that 25 ms / 10 ms framing yields exactly four MFCC frames per
/// video frame over the whole clip.
const FRAMING_PAD_SECONDS: f64 = 0.015;
const TONE_GAIN: f64 = 0.5;
const FACE_SIZE: usize = 112;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_clips: usize,
    pub n_speakers_per_clip: usize,
    pub clip_seconds: f64,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub fps: f64,
    /// Moving-average width (video frames) applied to the latent innovations.
    pub smoothing: usize,
    /// Std of the per-speaker constant latent offset.
    pub identity_std: f64,
    pub min_turn_frames: usize,
    pub max_turn_frames: usize,
    /// Render 112×112 face crops instead of per-frame latent features.
    pub render_pixels: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_clips: 200,
            n_speakers_per_clip: 3,
            clip_seconds: 10.0,
            latent_dim: 8,
            noise_std: 0.05,
            seed: 42,
            sample_rate: 16000,
            fps: 25.0,
            smoothing: 3,
            identity_std: 0.5,
            min_turn_frames: 50,
            max_turn_frames: 100,
            render_pixels: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.n_clips == 0 {
            return bad("n_clips must be positive");
        }
        if self.n_speakers_per_clip == 0 {
            return bad("n_speakers_per_clip must be at least 1");
        }
        if !(self.noise_std >= 0.0) || !(self.identity_std >= 0.0) {
            return bad("noise_std and identity_std must be non-negative");
        }
        if self.latent_dim == 0 || self.smoothing == 0 {
            return bad("latent_dim and smoothing must be positive");
        }
        if !(self.clip_seconds > 0.0) || !(self.fps > 0.0) || self.sample_rate < 8000 {
            return bad("clip_seconds and fps must be positive, sample_rate at least 8000");
        }
        if self.min_turn_frames == 0 || self.min_turn_frames > self.max_turn_frames {
            return bad("turn lengths must satisfy 0 < min_turn_frames <= max_turn_frames");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            n_clips: kv.get_or("n_clips", d.n_clips)?,
            n_speakers_per_clip: kv.get_or("n_speakers_per_clip", d.n_speakers_per_clip)?,
            clip_seconds: kv.get_or("clip_seconds", d.clip_seconds)?,
            latent_dim: kv.get_or("latent_dim", d.latent_dim)?,
            noise_std: kv.get_or("noise_std", d.noise_std)?,
            seed: kv.get_or("seed", d.seed)?,
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            fps: kv.get_or("fps", d.fps)?,
            smoothing: kv.get_or("smoothing", d.smoothing)?,
            identity_std: kv.get_or("identity_std", d.identity_std)?,
            min_turn_frames: kv.get_or("min_turn_frames", d.min_turn_frames)?,
            max_turn_frames: kv.get_or("max_turn_frames", d.max_turn_frames)?,
            render_pixels: kv.get_or("render_pixels", d.render_pixels)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn frames_per_clip(&self) -> usize {
        (self.clip_seconds * self.fps).round().max(1.0) as usize
    }

    /// Tone frequency for each latent channel, centred on distinct bands of a 40-filter
    /// mel bank spanning `[0, sample_rate / 2]`.
    pub fn tone_frequencies(&self) -> Vec<f64> {
        const BANDS: usize = 40;
        let top = hz_to_mel(self.sample_rate as f64 / 2.0);
        (0..self.latent_dim)
            .map(|c| {
                let band = ((c + 1) * BANDS) as f64 / (self.latent_dim + 1) as f64;
                let band = band.round().clamp(1.0, BANDS as f64);
                mel_to_hz(band * top / (BANDS + 1) as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub clip: Clip,
    /// Per-video-frame latent that drove the audio (active speaker's latent plus audio noise).
    pub audio_latent: Matrix,
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:04}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates clip `index`; each clip draws from its own ChaCha stream of `spec.seed`.
pub fn generate_clip(spec: &SyntheticSpec, index: usize) -> Result<SyntheticClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let n = spec.frames_per_clip();
    let d = spec.latent_dim;
    let speakers = spec.n_speakers_per_clip;

    let latents: Vec<Matrix> = (0..speakers)
        .map(|_| speaker_latent(&mut rng, n, d, spec))
        .collect();

    let labels = turn_labels(&mut rng, n, speakers, spec);

    let mut audio_latent = Matrix::zeros(n, d);
    for t in 0..n {
        let src = latents[labels[t]].row(t);
        for (c, out) in audio_latent.row_mut(t).iter_mut().enumerate() {
            *out = src[c] + spec.noise_std * normal(&mut rng);
        }
    }

    let mut tracks = Vec::with_capacity(speakers);
    for latent in &latents {
        let mut feats = latent.clone();
        for v in feats.data_mut() {
            *v += spec.noise_std * normal(&mut rng);
        }
        tracks.push(if spec.render_pixels {
            Track::Frames((0..n).map(|t| render_face(feats.row(t))).collect())
        } else {
            Track::Features(feats)
        });
    }

    let phases: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let audio = render_audio(&audio_latent, spec, &phases);

    let clip = Clip {
        id: clip_id(index),
        video_fps: spec.fps,
        audio,
        tracks,
        labels: Some(labels),
    };
    clip.validate()?;
    Ok(SyntheticClip { clip, audio_latent })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>> {
    spec.validate()?;
    (0..spec.n_clips).map(|i| generate_clip(spec, i)).collect()
}

/// Writes one directory per clip under `out` and returns their paths.
pub fn write_synthetic_corpus(spec: &SyntheticSpec, out: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let mut dirs = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let clip = generate_clip(spec, i)?.clip;
        let dir = out.join(&clip.id);
        write_clip_dir(&dir, &clip)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn speaker_latent(rng: &mut ChaCha8Rng, n: usize, d: usize, spec: &SyntheticSpec) -> Matrix {
    let identity: Vec<f64> = (0..d).map(|_| spec.identity_std * normal(rng)).collect();
    let w = spec.smoothing;
    let innovations: Vec<f64> = (0..(n + w - 1) * d).map(|_| normal(rng)).collect();
    let norm = 1.0 / (w as f64).sqrt();
    let mut m = Matrix::zeros(n, d);
    for t in 0..n {
        for c in 0..d {
            let s: f64 = (0..w).map(|k| innovations[(t + k) * d + c]).sum();
            m.set(t, c, identity[c] + norm * s);
        }
    }
    m
}

fn turn_labels(rng: &mut ChaCha8Rng, n: usize, speakers: usize, spec: &SyntheticSpec) -> Vec<usize> {
    let mut labels = Vec::with_capacity(n);
    let mut current = rng.random_range(0..speakers);
    while labels.len() < n {
        let len = rng.random_range(spec.min_turn_frames..=spec.max_turn_frames);
        labels.extend(std::iter::repeat_n(current, len.min(n - labels.len())));
        if speakers > 1 {
            let step = rng.random_range(1..speakers);
            current = (current + step) % speakers;
        }
    }
    labels
}

fn render_audio(latent: &Matrix, spec: &SyntheticSpec, phases: &[f64]) -> Waveform {
    let sr = spec.sample_rate as f64;
    let n_frames = latent.rows();
    let d = latent.cols();
    let n_samples = (n_frames as f64 / spec.fps * sr).round() as usize
        + (FRAMING_PAD_SECONDS * sr).round() as usize;
    let freqs = spec.tone_frequencies();
    let base = 0.25 / d as f64;
    let mut samples = vec![0.0; n_samples];
    let mut amp = vec![0.0; d];
    for (i, s) in samples.iter_mut().enumerate() {
        // frame t is centred at (t + 0.5) / fps seconds
        let u = ((i as f64 / sr) * spec.fps - 0.5).clamp(0.0, (n_frames - 1) as f64);
        let t0 = (u.floor() as usize).min(n_frames - 1);
        let t1 = (t0 + 1).min(n_frames - 1);
        let frac = u - t0 as f64;
        let (r0, r1) = (latent.row(t0), latent.row(t1));
        for c in 0..d {
            amp[c] = base * (TONE_GAIN * ((1.0 - frac) * r0[c] + frac * r1[c])).exp();
        }
        let time = i as f64 / sr;
        *s = (0..d)
            .map(|c| amp[c] * (2.0 * PI * freqs[c] * time + phases[c]).sin())
            .sum();
    }
    Waveform {
        sample_rate: spec.sample_rate,
        samples,
    }
}

/// Face crop whose lower half carries one low-frequency cosine pattern per latent channel.
pub fn render_face(latent: &[f64]) -> Image {
    let n = FACE_SIZE;
    let mut data = vec![0.5; n * n];
    for (y, row) in data.chunks_exact_mut(n).enumerate() {
        if y < n / 2 {
            continue;
        }
        let fy = (y - n / 2) as f64 / (n / 2) as f64;
        for (x, px) in row.iter_mut().enumerate() {
            let fx = x as f64 / n as f64;
            let mut v = 0.5;
            for (c, &z) in latent.iter().enumerate() {
                let kx = (c % 3 + 1) as f64;
                let ky = (c / 3 + 1) as f64;
                v += 0.08 * z.tanh() * (PI * kx * fx).cos() * (PI * ky * fy).cos();
            }
            *px = v.clamp(0.0, 1.0);
        }
    }
    Image {
        height: n,
        width: n,
        channels: 1,
        data,
    }
}
