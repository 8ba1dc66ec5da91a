//! Per-stream feature extraction and the feature-level clip used by sampling, training and
//! inference.

pub mod mfcc;
pub mod video;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::clip::{clip_id_from_dir, read_clip_dir, read_labels_csv};
use crate::corpus::{read_tensor, write_tensor, Clip, Tensor, Track};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub use mfcc::{mfcc, MfccConfig, MfccExtractor, MfccFrames};
pub use video::{preprocess_frames, PreprocessOptions, VideoFrameTensor, FACE_SIDE};

/// MFCC frames (100 Hz) per video frame (25 fps).
pub const AUDIO_FRAMES_PER_VIDEO_FRAME: usize = 4;

/// A clip reduced to model inputs: an MFCC matrix plus one per-frame feature matrix per track.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip {
    pub id: String,
    /// `n_audio_frames × n_coeffs`
    pub mfcc: Matrix,
    /// Each `n_video_frames × frame_dim`; a frame is either a flattened 112×112 crop or a
    /// synthetic feature vector.
    pub tracks: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
}

impl FeatureClip {
    pub fn new(id: String, mfcc: Matrix, tracks: Vec<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = tracks.first().ok_or(Error::Empty("feature clip tracks"))?;
        let (n, d) = (first.rows(), first.cols());
        if tracks.iter().any(|t| t.rows() != n || t.cols() != d) {
            return Err(Error::format("feature clip", format!("{id}: track shapes differ")));
        }
        if let Some(l) = &labels {
            if l.len() != n || l.iter().any(|&k| k >= tracks.len()) {
                return Err(Error::format("feature clip", format!("{id}: labels do not match tracks")));
            }
        }
        Ok(FeatureClip {
            id,
            mfcc,
            tracks,
            labels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.tracks[0].rows()
    }

    pub fn frame_dim(&self) -> usize {
        self.tracks[0].cols()
    }

    pub fn n_coeffs(&self) -> usize {
        self.mfcc.cols()
    }

    /// Video frames that have a full block of aligned audio frames.
    pub fn usable_frames(&self) -> usize {
        self.frame_count()
            .min(self.mfcc.rows() / AUDIO_FRAMES_PER_VIDEO_FRAME)
    }

    /// Flattened `width` consecutive frames of `track` starting at `start`.
    pub fn video_window(&self, track: usize, start: usize, width: usize) -> Vec<f64> {
        let t = &self.tracks[track];
        t.data()[start * t.cols()..(start + width) * t.cols()].to_vec()
    }

    /// Flattened audio frames aligned with video frames `[start, start + width)`, where
    /// `start` may be any video-frame offset whose audio lies inside the clip.
    pub fn audio_window(&self, start: usize, width: usize) -> Vec<f64> {
        let a = AUDIO_FRAMES_PER_VIDEO_FRAME;
        let c = self.mfcc.cols();
        self.mfcc.data()[start * a * c..(start + width) * a * c].to_vec()
    }
}

pub fn extract_clip_features(
    clip: &Clip,
    mfcc_cfg: &MfccConfig,
    opts: &PreprocessOptions,
) -> Result<FeatureClip> {
    clip.validate()?;
    let mfcc = mfcc::mfcc(&clip.audio.samples, clip.audio.sample_rate, mfcc_cfg)?.frames;
    let tracks = clip
        .tracks
        .iter()
        .map(|t| match t {
            Track::Features(m) => Ok(m.clone()),
            Track::Frames(frames) => {
                let v = preprocess_frames(frames, opts, clip.video_fps)?;
                Matrix::from_rows(&v.frames)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureClip::new(clip.id.clone(), mfcc, tracks, clip.labels.clone())
}

fn video_feature_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("video_{k}.avt"))
}

/// Writes `mfcc.avt` and `video_<k>.avt` into `dir`.
pub fn write_feature_files(dir: &Path, clip: &FeatureClip) -> Result<()> {
    write_tensor(
        dir.join("mfcc.avt"),
        &Tensor::f64(vec![clip.mfcc.rows(), clip.mfcc.cols()], clip.mfcc.data().to_vec())?,
    )?;
    for (k, t) in clip.tracks.iter().enumerate() {
        let tensor = if t.cols() == FACE_SIDE * FACE_SIDE {
            Tensor::f32(
                vec![t.rows(), FACE_SIDE, FACE_SIDE],
                t.data().iter().map(|&v| v as f32).collect(),
            )?
        } else {
            Tensor::f64(vec![t.rows(), t.cols()], t.data().to_vec())?
        };
        write_tensor(video_feature_path(dir, k), &tensor)?;
    }
    Ok(())
}

fn tensor_as_rows(t: &Tensor) -> Result<Matrix> {
    let dims = t.dims();
    if dims.len() < 2 {
        return Err(Error::format("feature tensor", format!("rank {} < 2", dims.len())));
    }
    Matrix::new(dims[0], dims[1..].iter().product(), t.to_f64())
}

/// Loads a clip directory's features, computing them from `audio.wav` and the track files
/// when `mfcc.avt` is absent.
pub fn load_feature_clip(dir: &Path, mfcc_cfg: &MfccConfig, opts: &PreprocessOptions) -> Result<FeatureClip> {
    let mfcc_path = dir.join("mfcc.avt");
    if !mfcc_path.exists() {
        return extract_clip_features(&read_clip_dir(dir)?, mfcc_cfg, opts);
    }
    let mfcc = tensor_as_rows(&read_tensor(&mfcc_path)?)?;
    let mut tracks = Vec::new();
    while video_feature_path(dir, tracks.len()).exists() {
        tracks.push(tensor_as_rows(&read_tensor(video_feature_path(dir, tracks.len()))?)?);
    }
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(read_labels_csv(&labels_path)?)
    } else {
        None
    };
    FeatureClip::new(clip_id_from_dir(dir), mfcc, tracks, labels)
}

pub fn load_feature_corpus(dirs: &[PathBuf], mfcc_cfg: &MfccConfig, opts: &PreprocessOptions) -> Result<Vec<FeatureClip>> {
    dirs.par_iter()
        .map(|d| load_feature_clip(d, mfcc_cfg, opts))
        .collect()
}
