//! 13-coefficient MFCCs at 100 Hz.
//!
//! Pipeline: pre-emphasis over the whole signal, symmetric Hamming window, power spectrum via
//! a zero-padded FFT, triangular HTK-mel filterbank, natural log with a floor, orthonormal
//! DCT-II truncated to `n_coeffs` (coefficient 0 kept).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub n_mel_filters: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub pre_emphasis: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_coeffs: 13,
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            n_mel_filters: 40,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            pre_emphasis: 0.97,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0) || !(self.frame_len_ms > 0.0) {
            return Err(Error::config("hop_ms and frame_len_ms must be positive"));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mel_filters {
            return Err(Error::config("need 0 < n_coeffs <= n_mel_filters"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// Feature frames per second.
    pub fn rate(&self) -> f64 {
        1000.0 / self.hop_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccFrames {
    /// `n_frames × n_coeffs`
    pub frames: Matrix,
    pub rate: f64,
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one sample rate.
pub struct MfccExtractor {
    config: MfccConfig,
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    /// `n_mel_filters × (fft_size / 2 + 1)`
    filterbank: Matrix,
    /// `n_coeffs × n_mel_filters`
    dct: Matrix,
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    rate: f64,
}

impl MfccExtractor {
    pub fn new(sample_rate: u32, config: MfccConfig) -> Result<Self> {
        config.validate()?;
        if sample_rate < 8000 {
            return Err(Error::arg(format!("sample rate {sample_rate} below 8000 Hz")));
        }
        let sr = sample_rate as f64;
        let frame_len = (config.frame_len_ms * sr / 1000.0).round() as usize;
        let hop = (config.hop_ms * sr / 1000.0).round() as usize;
        if frame_len < 2 || hop == 0 {
            return Err(Error::config("frame or hop shorter than one sample"));
        }
        let fft_size = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();
        let fmax = config.fmax.unwrap_or(sr / 2.0);
        if !(config.fmin >= 0.0 && config.fmin < fmax && fmax <= sr / 2.0) {
            return Err(Error::config("need 0 <= fmin < fmax <= sample_rate / 2"));
        }
        let filterbank = mel_filterbank(config.n_mel_filters, fft_size, sr, config.fmin, fmax);
        let dct = dct2_orthonormal(config.n_coeffs, config.n_mel_filters);
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(MfccExtractor {
            rate: config.rate(),
            config,
            frame_len,
            hop,
            window,
            filterbank,
            dct,
            fft,
            fft_size,
        })
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            (n_samples - self.frame_len) / self.hop + 1
        }
    }

    pub fn compute(&self, waveform: &[f64]) -> Result<MfccFrames> {
        if waveform.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        let n_frames = self.frame_count(waveform.len());
        if n_frames == 0 {
            return Err(Error::arg(format!(
                "waveform of {} samples is shorter than one {}-sample frame",
                waveform.len(),
                self.frame_len
            )));
        }
        if waveform.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform".into()));
        }

        let a = self.config.pre_emphasis;
        let emphasized: Vec<f64> = std::iter::once(waveform[0])
            .chain(waveform.windows(2).map(|w| w[1] - a * w[0]))
            .collect();

        let n_bins = self.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; self.config.n_mel_filters];
        let mut out = Matrix::zeros(n_frames, self.config.n_coeffs);

        for f in 0..n_frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.frame_len {
                    Complex::new(emphasized[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, lm) in log_mel.iter_mut().enumerate() {
                let e: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                *lm = e.max(self.config.log_floor).ln();
            }
            for (c, o) in out.row_mut(f).iter_mut().enumerate() {
                *o = self.dct.row(c).iter().zip(&log_mel).map(|(d, l)| d * l).sum();
            }
        }
        Ok(MfccFrames {
            frames: out,
            rate: self.rate,
        })
    }
}

pub fn mfcc(waveform: &[f64], sample_rate: u32, config: &MfccConfig) -> Result<MfccFrames> {
    MfccExtractor::new(sample_rate, config.clone())?.compute(waveform)
}

fn mel_filterbank(n_filters: usize, fft_size: usize, sr: f64, fmin: f64, fmax: f64) -> Matrix {
    let n_bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(n_filters, n_bins);
    for m in 0..n_filters {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sr / fft_size as f64;
            let w = ((f - left) / (centre - left)).min((right - f) / (right - centre));
            if w > 0.0 {
                fb.set(m, k, w);
            }
        }
    }
    fb
}

fn dct2_orthonormal(n_out: usize, n_in: usize) -> Matrix {
    let mut m = Matrix::zeros(n_out, n_in);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            m.set(k, n, scale * (PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos());
        }
    }
    m
}
