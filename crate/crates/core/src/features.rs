//! Log-mel feature extraction.
//!
//! A clip is framed by a centered, reflection-padded STFT with a periodic Hann
//! window, converted to a power spectrum, projected onto area-normalized
//! triangular mel filters and log-compressed. The frame count is then forced to
//! the configured target by truncation or by repeating the last frame.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-10;
/// Frames per anomaly-detection context window.
pub const ASD_WINDOW: usize = 64;
/// Hop between consecutive context windows.
pub const ASD_SHIFT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("sample {i} is not finite")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn silent(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        AudioClip {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub target_frames: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl FeatureConfig {
    /// 40 ms Hann window, 20 ms hop, 40 bands, 500 frames at 44.1 kHz.
    pub fn asc() -> Self {
        Self::with(44_100, 1764, 882, 40, 500)
    }

    /// 1024-sample window, 512 hop, 64 bands, 401 frames at 20.48 kHz.
    pub fn ust() -> Self {
        Self::with(20_480, 1024, 512, 64, 401)
    }

    /// 1024-sample window, 512 hop, 128 bands at 16 kHz; 313 frames is a 10 s clip.
    pub fn asd() -> Self {
        Self::with(16_000, 1024, 512, 128, 313)
    }

    fn with(sample_rate: u32, window_length: usize, hop_length: usize, n_mels: usize, target_frames: usize) -> Self {
        FeatureConfig {
            sample_rate,
            window_length,
            hop_length,
            n_mels,
            target_frames,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            log_floor: LOG_FLOOR,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 || self.hop_length == 0 || self.window_length < 2 {
            return fail(format!("degenerate feature config {self:?}"));
        }
        if self.window_length < self.hop_length {
            return fail(format!(
                "window_length {} shorter than hop_length {}",
                self.window_length, self.hop_length
            ));
        }
        if self.n_mels == 0 || self.n_mels > self.n_bins() {
            return fail(format!("n_mels {} must lie in 1..={}", self.n_mels, self.n_bins()));
        }
        if self.target_frames == 0 {
            return fail("target_frames must be positive".into());
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return fail(format!("need 0 <= fmin < fmax <= nyquist, got {}..{}", self.fmin, self.fmax));
        }
        if !(self.log_floor.is_finite() && self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// Periodic Hann window `0.5 - 0.5 cos(2 pi k / n)`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
        .collect()
}

/// Index into `x` extended by mirror reflection about its first and last samples.
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Power spectrogram, one row per centered frame, `window_length / 2 + 1` columns.
pub fn stft_power(samples: &[f64], window_length: usize, hop_length: usize) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::Input("empty clip".into()));
    }
    if samples.len() < window_length {
        return Err(Error::Input(format!(
            "clip of {} samples is shorter than the {window_length}-sample window",
            samples.len()
        )));
    }
    if hop_length == 0 {
        return Err(Error::Input("hop_length must be positive".into()));
    }
    let window = hann_window(window_length);
    let n_bins = window_length / 2 + 1;
    let n_frames = 1 + samples.len() / hop_length;
    let pad = (window_length / 2) as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_length);
    let mut buf = vec![Complex::new(0.0, 0.0); window_length];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Matrix::zeros(n_frames, n_bins);
    for f in 0..n_frames {
        let start = (f * hop_length) as isize - pad;
        for (k, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            let s = samples[reflect(start + k as isize, samples.len())];
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in out.row_mut(f).iter_mut().zip(&buf) {
            *o = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies of `n_mels` triangles: `n_mels + 2` points equally spaced in mel.
pub fn mel_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with peak `2 / (upper - lower)`, so each has unit continuous area.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Matrix {
    let n_bins = n_fft / 2 + 1;
    let edges = mel_edges(n_mels, fmin, fmax);
    let mut bank = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
            if w > 0.0 {
                bank.set(m, k, w * scale);
            }
        }
    }
    bank
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    /// Frames by mel bands.
    pub values: Matrix,
    pub config: FeatureConfig,
}

impl LogMelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bands(&self) -> usize {
        self.values.cols()
    }
}

/// Reusable extractor; holds the filterbank for one configuration.
#[derive(Debug, Clone)]
pub struct LogMelExtractor {
    config: FeatureConfig,
    bank: Matrix,
}

impl LogMelExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let bank = mel_filterbank(
            config.sample_rate,
            config.window_length,
            config.n_mels,
            config.fmin,
            config.fmax,
        );
        Ok(LogMelExtractor { config, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.bank
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<LogMelSpectrogram> {
        let cfg = &self.config;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Input(format!(
                "clip sampled at {} Hz, features expect {} Hz",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        let power = stft_power(&clip.samples, cfg.window_length, cfg.hop_length)?;
        let mut values = Matrix::zeros(cfg.target_frames, cfg.n_mels);
        for t in 0..cfg.target_frames {
            // Frames past the end repeat the last computed frame.
            let src = power.row(t.min(power.rows() - 1));
            for m in 0..cfg.n_mels {
                let e: f64 = self.bank.row(m).iter().zip(src).map(|(w, p)| w * p).sum();
                values.set(t, m, e.max(cfg.log_floor).ln());
            }
        }
        Ok(LogMelSpectrogram {
            values,
            config: cfg.clone(),
        })
    }
}

pub fn log_mel(clip: &AudioClip, config: &FeatureConfig) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new(config.clone())?.extract(clip)
}

pub fn window_count(frames: usize, window: usize, shift: usize) -> usize {
    if frames < window {
        0
    } else {
        (frames - window) / shift + 1
    }
}

/// Overlapping `window`-frame slices starting every `shift` frames.
pub fn context_windows(values: &Matrix, window: usize, shift: usize) -> Result<Vec<Matrix>> {
    if window == 0 || shift == 0 {
        return Err(Error::Input("window and shift must be positive".into()));
    }
    if values.rows() < window {
        return Err(Error::Input(format!(
            "{} frames cannot hold a {window}-frame window",
            values.rows()
        )));
    }
    Ok((0..window_count(values.rows(), window, shift))
        .map(|k| values.slice_rows(k * shift, window))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_closed_form() {
        let w = hann_window(4);
        let expect = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for n in [2, 8, 1764, 1024] {
            let s: f64 = hann_window(n).iter().sum();
            assert!((s - n as f64 / 2.0).abs() < 1e-9, "n={n}: {s}");
        }
    }

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn frame_count_is_one_plus_len_over_hop() {
        let p = stft_power(&vec![0.0; 1000], 256, 100).unwrap();
        assert_eq!(p.shape(), (11, 129));
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_or_empty_clip_is_rejected() {
        assert!(stft_power(&[], 4, 2).is_err());
        assert!(stft_power(&[0.0; 3], 4, 2).is_err());
    }

    #[test]
    fn config_validation() {
        for t in crate::Task::ALL {
            t.feature_config().validate().unwrap();
        }
        let mut c = FeatureConfig::asc();
        c.hop_length = 2000;
        assert!(c.validate().is_err());
        let mut c = FeatureConfig::asc();
        c.n_mels = 900;
        assert!(c.validate().is_err());
    }
}
