//! Minimal RIFF/WAVE reader and writer: PCM-16 and IEEE float-32, any channel count
//! (downmixed to mono by averaging on read).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const PCM: u16 = 1;
const IEEE_FLOAT: u16 = 3;
const EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(Error::format("wav", "RIFF header truncated"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::format("wav", "RIFF tag missing"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::format("wav", "WAVE form type missing"));
    }

    let mut format: Option<Format> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = le_u32(bytes, at + 4) as usize;
        let body = at + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::format("wav", "fmt chunk too short"));
                }
                let mut codec = le_u16(bytes, body);
                if codec == EXTENSIBLE {
                    if size < 40 || body + 40 > bytes.len() {
                        return Err(Error::format("wav", "extensible fmt chunk too short"));
                    }
                    // first two bytes of the subformat GUID carry the codec
                    codec = le_u16(bytes, body + 24);
                }
                format = Some(Format {
                    codec,
                    channels: le_u16(bytes, body + 2),
                    sample_rate: le_u32(bytes, body + 4),
                    bits: le_u16(bytes, body + 14),
                });
            }
            b"data" => {
                let fmt = format
                    .as_ref()
                    .ok_or_else(|| Error::format("wav", "data chunk before fmt chunk"))?;
                if body + size > bytes.len() {
                    return Err(Error::format("wav", "payload shorter than declared"));
                }
                return decode(fmt, &bytes[body..body + size]);
            }
            _ => {}
        }
        // chunks are padded to even length
        at = body + size + (size & 1);
    }
    Err(Error::format("wav", "no data chunk"))
}

fn decode(fmt: &Format, payload: &[u8]) -> Result<Waveform> {
    if fmt.channels == 0 {
        return Err(Error::format("wav", "channel count is zero"));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::format("wav", "sample rate is zero"));
    }
    let width = match (fmt.codec, fmt.bits) {
        (PCM, 16) => 2,
        (IEEE_FLOAT, 32) => 4,
        (PCM, b) => {
            return Err(Error::format("wav", format!("unsupported PCM bit depth {b}")));
        }
        (IEEE_FLOAT, b) => {
            return Err(Error::format("wav", format!("unsupported float bit depth {b}")));
        }
        (c, _) => return Err(Error::format("wav", format!("unsupported codec {c}"))),
    };
    let channels = fmt.channels as usize;
    let frame = width * channels;
    let samples = payload
        .chunks_exact(frame)
        .map(|f| {
            let sum: f64 = f
                .chunks_exact(width)
                .map(|s| match width {
                    2 => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
                    _ => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
                })
                .sum();
            sum / channels as f64
        })
        .collect();
    Ok(Waveform {
        sample_rate: fmt.sample_rate,
        samples,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

fn header(codec: u16, bits: u16, sample_rate: u32, n_samples: usize) -> Vec<u8> {
    let block = bits / 8;
    let data_len = n_samples as u32 * block as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out
}

/// Mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled by 32767.
pub fn encode_wav_pcm16(wave: &Waveform) -> Vec<u8> {
    let mut out = header(PCM, 16, wave.sample_rate, wave.samples.len());
    for &s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Mono IEEE float-32.
pub fn encode_wav_f32(wave: &Waveform) -> Vec<u8> {
    let mut out = header(IEEE_FLOAT, 32, wave.sample_rate, wave.samples.len());
    for &s in &wave.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav_pcm16(wave)).map_err(|e| Error::io(path, e))
}
