//! Active-speaker diarization from a trained model: per-frame audio-to-face distances,
//! median smoothing, argmin assignment, and confusion-only DER / macro-F1 scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::encoders::TwoStreamModel;
use crate::error::{Error, Result};
use crate::features::{FeatureClip, AUDIO_FRAMES_PER_VIDEO_FRAME};
use crate::numeric::Matrix;

pub const DEFAULT_SMOOTHING: usize = 19;

/// Rows are video frames, columns face tracks; entries are non-negative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Empty("distance matrix"));
        }
        if let Some(v) = values.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite(format!("distance matrix entry {v}")));
        }
        Ok(DistanceMatrix(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        DistanceMatrix::new(Matrix::from_rows(rows)?)
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn tracks(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, frame: usize, track: usize) -> f64 {
        self.0.get(frame, track)
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        self.0.row(frame)
    }

    pub fn column(&self, track: usize) -> Vec<f64> {
        (0..self.frames()).map(|t| self.get(t, track)).collect()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationResult {
    /// Active track per frame.
    pub labels: Vec<usize>,
    pub raw: DistanceMatrix,
    pub smoothed: DistanceMatrix,
}

/// Frame indices of the `width`-frame window used for frame `t` of an `n`-frame clip: centered
/// on `t`, slid inward at the edges, and padded by repeating the last frame when the clip is
/// shorter than the window.
pub fn window_frames(t: usize, n: usize, width: usize) -> Vec<usize> {
    let start = t.saturating_sub(width / 2).min(n.saturating_sub(width));
    (0..width).map(|i| (start + i).min(n - 1)).collect()
}

/// Embeds each track's window at every frame and the aligned audio window, and returns their
/// l2 distances.
pub fn compute_distances(model: &TwoStreamModel, clip: &FeatureClip, width: usize) -> Result<DistanceMatrix> {
    let (fd, nc) = (clip.frame_dim(), clip.n_coeffs());
    let a = AUDIO_FRAMES_PER_VIDEO_FRAME;
    if width == 0 {
        return Err(Error::arg("window width must be positive"));
    }
    if model.video.spec().input_dim() != width * fd {
        return Err(Error::DimensionMismatch {
            expected: model.video.spec().input_dim(),
            actual: width * fd,
        });
    }
    if model.audio.spec().input_dim() != a * width * nc {
        return Err(Error::DimensionMismatch {
            expected: model.audio.spec().input_dim(),
            actual: a * width * nc,
        });
    }
    if clip.tracks.iter().any(|t| t.rows() != clip.frame_count()) {
        return Err(Error::arg("face tracks have different frame counts"));
    }
    let n = clip.frame_count();
    let usable = clip.usable_frames();
    if usable == 0 {
        return Err(Error::Empty("clip audio"));
    }
    let windows: Vec<Vec<usize>> = (0..n).map(|t| window_frames(t.min(usable - 1), usable, width)).collect();

    let mut audio = Vec::with_capacity(n * a * width * nc);
    for w in &windows {
        for &f in w {
            audio.extend_from_slice(&clip.mfcc.data()[f * a * nc..(f + 1) * a * nc]);
        }
    }
    let audio_emb = model.encode_audio(&Matrix::new(n, a * width * nc, audio)?)?;

    let columns: Vec<Vec<f64>> = clip
        .tracks
        .par_iter()
        .map(|track| -> Result<Vec<f64>> {
            let mut video = Vec::with_capacity(n * width * fd);
            for w in &windows {
                for &f in w {
                    video.extend_from_slice(track.row(f));
                }
            }
            let emb = model.encode_video(&Matrix::new(n, width * fd, video)?)?;
            Ok((0..n)
                .map(|t| {
                    emb.row(t)
                        .iter()
                        .zip(audio_emb.row(t))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let k = columns.len();
    let mut m = Matrix::zeros(n, k);
    for (j, col) in columns.iter().enumerate() {
        for (t, &d) in col.iter().enumerate() {
            m.set(t, j, d);
        }
    }
    DistanceMatrix::new(m)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Per-column running median over an odd `window`, replicating edge values.
pub fn smooth(matrix: &DistanceMatrix, window: usize) -> Result<DistanceMatrix> {
    if window.is_multiple_of(2) {
        return Err(Error::arg(format!("smoothing window must be odd, got {window}")));
    }
    let (n, k, h) = (matrix.frames(), matrix.tracks(), window / 2);
    let mut out = Matrix::zeros(n, k);
    let mut buf = Vec::with_capacity(window);
    for j in 0..k {
        for t in 0..n {
            buf.clear();
            buf.extend((0..window).map(|i| matrix.get((t + i).saturating_sub(h).min(n - 1), j)));
            out.set(t, j, median(&mut buf));
        }
    }
    DistanceMatrix::new(out)
}

/// Index of the nearest track per frame; ties go to the lowest index.
pub fn assign_speakers(matrix: &DistanceMatrix) -> Vec<usize> {
    (0..matrix.frames())
        .map(|t| {
            matrix
                .row(t)
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (j, &d)| if d < best.1 { (j, d) } else { best })
                .0
        })
        .collect()
}

/// Distances, smoothing and assignment for one clip.
pub fn diarize(model: &TwoStreamModel, clip: &FeatureClip, width: usize, window: usize) -> Result<DiarizationResult> {
    let raw = compute_distances(model, clip, width)?;
    let smoothed = smooth(&raw, window)?;
    Ok(DiarizationResult {
        labels: assign_speakers(&smoothed),
        raw,
        smoothed,
    })
}

fn check_lengths(reference: &[usize], hypothesis: &[usize]) -> Result<()> {
    if reference.len() != hypothesis.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: hypothesis.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    Ok(())
}

/// Fraction of frames labelled with the wrong track. Every frame counts as speech, so there
/// are no missed-speech or false-alarm terms.
pub fn der(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    check_lengths(reference, hypothesis)?;
    let wrong = reference.iter().zip(hypothesis).filter(|(r, h)| r != h).count();
    Ok(wrong as f64 / reference.len() as f64)
}

/// Per-track F1 of frame labels, averaged over the tracks that occur in the reference.
pub fn f1(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    check_lengths(reference, hypothesis)?;
    let mut tracks: Vec<usize> = reference.to_vec();
    tracks.sort_unstable();
    tracks.dedup();
    let total: f64 = tracks
        .iter()
        .map(|&k| {
            let tp = reference.iter().zip(hypothesis).filter(|&(&r, &h)| r == k && h == k).count() as f64;
            let predicted = hypothesis.iter().filter(|&&h| h == k).count() as f64;
            let actual = reference.iter().filter(|&&r| r == k).count() as f64;
            // F1 = 2·TP / (predicted + actual); actual > 0 for every reference track.
            2.0 * tp / (predicted + actual)
        })
        .sum();
    Ok(total / tracks.len() as f64)
}

/// `frame,raw_0..raw_{K-1},smooth_0..smooth_{K-1}`
pub fn distances_csv(raw: &DistanceMatrix, smoothed: &DistanceMatrix) -> Result<String> {
    if raw.frames() != smoothed.frames() || raw.tracks() != smoothed.tracks() {
        return Err(Error::arg("raw and smoothed distances differ in shape"));
    }
    let k = raw.tracks();
    let mut s = String::from("frame");
    (0..k).for_each(|j| {
        let _ = write!(s, ",raw_{j}");
    });
    (0..k).for_each(|j| {
        let _ = write!(s, ",smooth_{j}");
    });
    s.push('\n');
    for t in 0..raw.frames() {
        let _ = write!(s, "{t}");
        for v in raw.row(t).iter().chain(smoothed.row(t)) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// `frame,track_id`
pub fn hypothesis_csv(labels: &[usize]) -> String {
    let mut s = String::from("frame,track_id\n");
    for (t, l) in labels.iter().enumerate() {
        let _ = writeln!(s, "{t},{l}");
    }
    s
}

/// Writes `distances.csv` and `hypothesis.csv` into `dir`.
pub fn write_outputs(dir: &Path, result: &DiarizationResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = dir.join("distances.csv");
    fs::write(&d, distances_csv(&result.raw, &result.smoothed)?).map_err(|e| Error::io(&d, e))?;
    let h = dir.join("hypothesis.csv");
    fs::write(&h, hypothesis_csv(&result.labels)).map_err(|e| Error::io(&h, e))
}

/// Reads a `frame,track` CSV (hypothesis or reference labels).
pub fn read_track_csv(path: &Path) -> Result<Vec<usize>> {
    crate::corpus::clip::read_labels_csv(path)
}
