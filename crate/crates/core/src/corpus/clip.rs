use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::tensor::{read_tensor, write_tensor, Tensor};
use crate::corpus::wav::{read_wav, write_wav_pcm16, Waveform};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const DEFAULT_FPS: f64 = 25.0;

/// A single frame, `channels` is 1 (gray) or 3 (RGB, interleaved).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Image::new(height, width, 1, data)
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("image"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels: 1,
            data: vec![value; height * width],
        }
    }
}

/// Per-frame content of one face track: cropped frames, or per-frame feature vectors
/// that stand in for them.
#[derive(Debug, Clone, PartialEq)]
pub enum Track {
    Frames(Vec<Image>),
    Features(Matrix),
}

impl Track {
    pub fn frame_count(&self) -> usize {
        match self {
            Track::Frames(f) => f.len(),
            Track::Features(m) => m.rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub video_fps: f64,
    pub audio: Waveform,
    pub tracks: Vec<Track>,
    /// Ground-truth active track per video frame, when known.
    pub labels: Option<Vec<usize>>,
}

impl Clip {
    pub fn frame_count(&self) -> usize {
        self.tracks.first().map_or(0, Track::frame_count)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frame_count();
        if self.tracks.is_empty() || n == 0 {
            return Err(Error::format("clip", format!("{}: no track frames", self.id)));
        }
        if let Some(t) = self.tracks.iter().find(|t| t.frame_count() != n) {
            return Err(Error::format(
                "clip",
                format!(
                    "{}: track frame counts differ ({} vs {n})",
                    self.id,
                    t.frame_count()
                ),
            ));
        }
        let video_s = n as f64 / self.video_fps;
        if (self.audio.duration_seconds() - video_s).abs() > 1.0 / self.video_fps {
            return Err(Error::format(
                "clip",
                format!(
                    "{}: audio lasts {:.3}s but video lasts {:.3}s",
                    self.id,
                    self.audio.duration_seconds(),
                    video_s
                ),
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::format("clip", format!("{}: label count {} != {n}", self.id, labels.len())));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= self.tracks.len()) {
                return Err(Error::format("clip", format!("{}: label {bad} names no track", self.id)));
            }
        }
        Ok(())
    }
}

pub fn track_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("track_{k}.avt"))
}

pub fn track_to_tensor(track: &Track) -> Result<Tensor> {
    match track {
        Track::Features(m) => Tensor::f64(vec![m.rows(), m.cols()], m.data().to_vec()),
        Track::Frames(frames) => {
            let first = frames.first().ok_or(Error::Empty("track frames"))?;
            let mut dims = vec![frames.len(), first.height, first.width];
            if first.channels == 3 {
                dims.push(3);
            }
            let mut values = Vec::with_capacity(dims.iter().product());
            for f in frames {
                if (f.height, f.width, f.channels) != (first.height, first.width, first.channels) {
                    return Err(Error::arg("frames within a track must share a shape"));
                }
                values.extend(f.data.iter().map(|&v| v as f32));
            }
            Tensor::f32(dims, values)
        }
    }
}

pub fn track_from_tensor(t: &Tensor) -> Result<Track> {
    let values = t.to_f64();
    match *t.dims() {
        [n, d] => Ok(Track::Features(Matrix::new(n, d, values)?)),
        [_, h, w] | [_, h, w, _] => {
            let channels = if t.dims().len() == 4 { t.dims()[3] } else { 1 };
            let per = h * w * channels;
            if per == 0 {
                return Err(Error::format("track", "zero-sized frames"));
            }
            values
                .chunks_exact(per)
                .map(|c| Image::new(h, w, channels, c.to_vec()))
                .collect::<Result<Vec<_>>>()
                .map(Track::Frames)
        }
        _ => Err(Error::format(
            "track",
            format!("expected rank 2, 3 or 4, got dims {:?}", t.dims()),
        )),
    }
}

pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::from("frame_index,active_track_id\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a two-column `frame,track` CSV with a header row.
pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let frame: usize = parse_field(cols.next(), path, n)?;
        let track: usize = parse_field(cols.next(), path, n)?;
        if frame != labels.len() {
            return Err(Error::format(
                "labels csv",
                format!("{}:{}: expected frame {}, found {frame}", path.display(), n + 1, labels.len()),
            ));
        }
        labels.push(track);
    }
    Ok(labels)
}

fn parse_field(field: Option<&str>, path: &Path, line: usize) -> Result<usize> {
    field
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::format("labels csv", format!("{}:{}: bad field", path.display(), line + 1)))
}

/// Writes `audio.wav`, `track_<k>.avt` and (when known) `labels.csv`.
pub fn write_clip_dir(dir: &Path, clip: &Clip) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav_pcm16(dir.join("audio.wav"), &clip.audio)?;
    for (k, track) in clip.tracks.iter().enumerate() {
        write_tensor(track_path(dir, k), &track_to_tensor(track)?)?;
    }
    if let Some(labels) = &clip.labels {
        write_labels_csv(&dir.join("labels.csv"), labels)?;
    }
    Ok(())
}

pub fn read_clip_dir(dir: &Path) -> Result<Clip> {
    let audio = read_wav(dir.join("audio.wav"))?;
    let mut tracks = Vec::new();
    while track_path(dir, tracks.len()).exists() {
        tracks.push(track_from_tensor(&read_tensor(track_path(dir, tracks.len()))?)?);
    }
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(read_labels_csv(&labels_path)?)
    } else {
        None
    };
    let clip = Clip {
        id: clip_id_from_dir(dir),
        video_fps: DEFAULT_FPS,
        audio,
        tracks,
        labels,
    };
    clip.validate()?;
    Ok(clip)
}

pub(crate) fn clip_id_from_dir(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Clip directories directly under `root`, sorted by name.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("audio.wav").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}
