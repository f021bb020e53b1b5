//! 16-bit PCM mono RIFF/WAVE.

use std::path::Path;

use crate::features::AudioClip;
use crate::{Error, Result};

fn format_error(path: &Path, field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        context: path.display().to_string(),
        field,
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses WAV bytes; `path` only labels errors.
pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_error(path, "RIFF header", "missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(size).filter(|&e| e <= bytes.len());
        match id {
            b"fmt " => {
                let end = end.ok_or_else(|| format_error(path, "fmt chunk", "truncated"))?;
                if size < 16 {
                    return Err(format_error(path, "fmt chunk", format!("size {size} < 16")));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
                pos = end + (size & 1);
            }
            b"data" => {
                let (audio_format, channels, rate, bits) =
                    format.ok_or_else(|| format_error(path, "fmt chunk", "missing before data"))?;
                if audio_format != 1 {
                    return Err(format_error(path, "audio format", format!("{audio_format} is not PCM (1)")));
                }
                if channels != 1 {
                    return Err(format_error(path, "channels", format!("{channels}, expected mono")));
                }
                if bits != 16 {
                    return Err(format_error(path, "bits per sample", format!("{bits}, expected 16")));
                }
                if rate == 0 {
                    return Err(format_error(path, "sample rate", "zero"));
                }
                let end = end.ok_or_else(|| {
                    format_error(
                        path,
                        "data chunk",
                        format!("declares {size} bytes, {} present", bytes.len() - body),
                    )
                })?;
                if !size.is_multiple_of(2) {
                    return Err(format_error(path, "data chunk", "odd byte count for 16-bit samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {
                pos = end.ok_or_else(|| format_error(path, "chunk", "truncated"))? + (size & 1);
            }
        }
    }
    Err(format_error(path, "data chunk", "missing"))
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

/// Reads and linearly resamples to `rate` when the file differs.
pub fn read_wav_at(path: &Path, rate: u32) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    Ok(resample_linear(&clip, rate))
}

/// Linear interpolation onto a `rate` grid of `round(len * rate / source_rate)` samples.
pub fn resample_linear(clip: &AudioClip, rate: u32) -> AudioClip {
    if clip.sample_rate == rate || clip.samples.is_empty() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: rate,
        };
    }
    let ratio = clip.sample_rate as f64 / rate as f64;
    let n = (clip.samples.len() as f64 / ratio).round() as usize;
    let last = clip.samples.len() - 1;
    let samples = (0..n)
        .map(|i| {
            let x = i as f64 * ratio;
            let j = (x.floor() as usize).min(last);
            let frac = x - j as f64;
            let next = clip.samples[(j + 1).min(last)];
            clip.samples[j] * (1.0 - frac) + next * frac
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: rate,
    }
}

/// Quantizes to 16 bits, `round(32768 x)` clamped to the i16 range.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut b = Vec::with_capacity(44 + data_len);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&clip.sample_rate.to_le_bytes());
    b.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        b.extend_from_slice(&q.to_le_bytes());
    }
    b
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    super::write_atomic(path, &encode_wav(clip))
}
