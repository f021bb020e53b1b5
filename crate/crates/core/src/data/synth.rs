//! Deterministic synthetic datasets for the three tasks.
//!
//! Each generator draws a per-clip recipe and seed up front; audio is rendered
//! lazily so a dataset never has to be held in memory at once.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::manifest::{LabeledClip, Labels, Manifest};
use super::{Domain, Split};
use crate::features::{stft_power, AudioClip};
use crate::task::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscSynth {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub sample_rate: u32,
    pub duration: f64,
    pub train_fraction: f64,
}

impl Default for AscSynth {
    fn default() -> Self {
        AscSynth {
            n_classes: 3,
            clips_per_class: 20,
            sample_rate: 44_100,
            duration: 10.0,
            train_fraction: 0.7,
        }
    }
}

impl AscSynth {
    /// Band centers, log-spaced from 200 Hz to 0.7 times Nyquist.
    pub fn centers(&self) -> Vec<f64> {
        let hi = 0.7 * self.sample_rate as f64 / 2.0;
        let lo: f64 = 200.0;
        if self.n_classes == 1 {
            return vec![lo];
        }
        (0..self.n_classes)
            .map(|k| lo * (hi / lo).powf(k as f64 / (self.n_classes - 1) as f64))
            .collect()
    }

    /// Amplitude-modulation rate of class `k` in Hz.
    pub fn am_rate(k: usize) -> f64 {
        2.0 + 3.0 * k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UstSynth {
    pub n_classes: usize,
    pub n_clips: usize,
    pub sample_rate: u32,
    pub duration: f64,
    pub train_fraction: f64,
}

impl Default for UstSynth {
    fn default() -> Self {
        UstSynth {
            n_classes: 4,
            n_clips: 80,
            sample_rate: 20_480,
            duration: 10.0,
            train_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsdSynth {
    pub sections: usize,
    pub normals_per_section: usize,
    pub anomalies_per_section: usize,
    pub sample_rate: u32,
    pub duration: f64,
    /// Normal target-domain clips per section in the training split.
    pub target_train: usize,
    /// Normal clips per section and domain held out for testing.
    pub test_normals_per_domain: usize,
}

impl Default for AsdSynth {
    fn default() -> Self {
        AsdSynth {
            sections: 3,
            normals_per_section: 40,
            anomalies_per_section: 20,
            sample_rate: 16_000,
            duration: 10.0,
            target_train: 3,
            test_normals_per_domain: 5,
        }
    }
}

impl AsdSynth {
    /// Source-domain fundamental of section `s`; ratios avoid shared low harmonics.
    pub fn fundamental(s: usize) -> f64 {
        180.0 * 1.3f64.powi(s as i32)
    }

    /// Relative fundamental shift of the target domain.
    pub const TARGET_SHIFT: f64 = 1.03;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    ToneBurst,
    Chirp,
    PulseTrain,
    NoiseBurst,
}

impl EventKind {
    pub fn of_class(k: usize) -> Self {
        [
            EventKind::ToneBurst,
            EventKind::Chirp,
            EventKind::PulseTrain,
            EventKind::NoiseBurst,
        ][k % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Defect {
    /// Partials at another section's harmonics.
    Partials { other_f0: f64 },
    /// Amplitude modulation at the spacing between this and another section's fundamental.
    Modulation { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Recipe {
    Scene { center: f64, am_rate: f64 },
    Events { classes: Vec<usize> },
    Machine { f0: f64, defect: Option<Defect> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: LabeledClip,
    pub recipe: Recipe,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub task: Task,
    pub sample_rate: u32,
    pub duration: f64,
    pub clips: Vec<SynthClip>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}

/// Real noise with magnitude response `shape(f)` in Hz, random phases.
fn shaped_noise<R: Rng + ?Sized>(n: usize, rate: f64, shape: impl Fn(f64) -> f64, rng: &mut R) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let g = shape(k as f64 * rate / n as f64);
        let c = Complex::new(gaussian(rng), gaussian(rng)) * g;
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    if n.is_multiple_of(2) {
        spec[n / 2] = Complex::new(spec[n / 2].re, 0.0);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

fn white<R: Rng + ?Sized>(n: usize, level: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| level * gaussian(rng)).collect()
}

/// Hann-shaped envelope over `len` samples.
fn bump(i: usize, len: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()
}

fn add_event<R: Rng + ?Sized>(out: &mut [f64], rate: f64, class: usize, rng: &mut R) {
    let kind = EventKind::of_class(class);
    let variant = 1.5f64.powi((class / 4) as i32);
    let level = rng.random_range(0.05..0.15);
    let (seconds, occurrences) = match kind {
        EventKind::ToneBurst => (0.25, rng.random_range(2..=4)),
        EventKind::Chirp => (0.8, rng.random_range(1..=3)),
        EventKind::PulseTrain => (1.5, rng.random_range(1..=2)),
        EventKind::NoiseBurst => (0.4, rng.random_range(1..=3)),
    };
    let len = ((seconds * rate) as usize).min(out.len());
    for _ in 0..occurrences {
        let start = rng.random_range(0..=out.len() - len);
        let mut ev: Vec<f64> = match kind {
            EventKind::ToneBurst => {
                let f = 1000.0 * variant * rng.random_range(0.97..1.03);
                (0..len).map(|i| (2.0 * PI * f * i as f64 / rate).sin()).collect()
            }
            EventKind::Chirp => {
                let (f0, f1) = (400.0 * variant, 3500.0 * variant);
                let dur = len as f64 / rate;
                (0..len)
                    .map(|i| {
                        let t = i as f64 / rate;
                        (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)).sin()
                    })
                    .collect()
            }
            EventKind::PulseTrain => {
                let period = (rate / (12.0 * variant)) as usize;
                let click = (0.002 * rate) as usize;
                let mut v = vec![0.0; len];
                for p in (0..len).step_by(period.max(1)) {
                    for j in 0..click.min(len - p) {
                        v[p + j] = gaussian(rng) * (-(j as f64) / (click as f64 / 4.0)).exp();
                    }
                }
                v
            }
            EventKind::NoiseBurst => white(len, 1.0, rng),
        };
        scale_to_rms(&mut ev, level);
        for (i, v) in ev.iter().enumerate() {
            out[start + i] += v * bump(i, len);
        }
    }
}

impl SynthClip {
    pub fn render(&self, sample_rate: u32, duration: f64) -> AudioClip {
        let n = (duration * sample_rate as f64).round() as usize;
        let rate = sample_rate as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x = match &self.recipe {
            Recipe::Scene { center, am_rate } => {
                let (lc, width) = (center.ln(), 0.25);
                let mut x = shaped_noise(
                    n,
                    rate,
                    |f| {
                        let d = (f.max(1.0).ln() - lc) / width;
                        (-0.5 * d * d).exp()
                    },
                    &mut rng,
                );
                scale_to_rms(&mut x, 0.1);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (i, v) in x.iter_mut().enumerate() {
                    *v *= 1.0 + 0.6 * (2.0 * PI * am_rate * i as f64 / rate + phase).sin();
                }
                for (v, w) in x.iter_mut().zip(white(n, 0.005, &mut rng)) {
                    *v += w;
                }
                x
            }
            Recipe::Events { classes } => {
                let mut x = shaped_noise(n, rate, |f| 1.0 / f.max(20.0).sqrt(), &mut rng);
                scale_to_rms(&mut x, 0.02);
                for &c in classes {
                    add_event(&mut x, rate, c, &mut rng);
                }
                x
            }
            Recipe::Machine { f0, defect } => {
                let f0 = f0 * (1.0 + 0.005 * rng.random_range(-1.0..1.0));
                let partials: Vec<(f64, f64, f64)> = (1..=10)
                    .filter(|&h| h as f64 * f0 < 0.45 * rate)
                    .map(|h| {
                        let amp = (1.0 + 0.1 * gaussian(&mut rng)) / h as f64;
                        (h as f64 * f0, amp, rng.random_range(0.0..2.0 * PI))
                    })
                    .collect();
                let mut x: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = i as f64 / rate;
                        partials.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum()
                    })
                    .collect();
                scale_to_rms(&mut x, 0.1);
                match defect {
                    Some(Defect::Partials { other_f0 }) => {
                        let extra: Vec<(f64, f64)> = (1..=3)
                            .map(|h| (h as f64 * other_f0, rng.random_range(0.0..2.0 * PI)))
                            .collect();
                        for (i, v) in x.iter_mut().enumerate() {
                            let t = i as f64 / rate;
                            *v += extra.iter().map(|&(f, p)| 0.05 * (2.0 * PI * f * t + p).sin()).sum::<f64>();
                        }
                    }
                    Some(Defect::Modulation { rate: fm }) => {
                        let phase = rng.random_range(0.0..2.0 * PI);
                        for (i, v) in x.iter_mut().enumerate() {
                            *v *= 1.0 + 0.9 * (2.0 * PI * fm * i as f64 / rate + phase).sin();
                        }
                    }
                    None => {}
                }
                // Defects also bring broadband rattle.
                let floor = if defect.is_some() { 0.02 } else { 0.003 };
                for (v, w) in x.iter_mut().zip(white(n, floor, &mut rng)) {
                    *v += w;
                }
                x
            }
        };
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.99 {
            x.iter_mut().for_each(|v| *v *= 0.99 / peak);
        }
        AudioClip {
            samples: x,
            sample_rate,
        }
    }
}

fn clip_path(task: Task, index: usize) -> PathBuf {
    PathBuf::from(format!("audio/{task}_{index:03}.wav"))
}

pub fn synth_asc(cfg: &AscSynth, seed: u64) -> Result<SynthDataset> {
    if cfg.n_classes == 0 || cfg.clips_per_class == 0 || !(cfg.duration.is_finite() && cfg.duration > 0.0) {
        return Err(Error::Config(format!("degenerate scene generator {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = cfg.centers();
    let n_train = (cfg.train_fraction * cfg.clips_per_class as f64).round() as usize;
    let mut clips = Vec::new();
    for (k, &center) in centers.iter().enumerate() {
        let mut splits: Vec<Split> = (0..cfg.clips_per_class)
            .map(|i| if i < n_train { Split::Train } else { Split::Test })
            .collect();
        splits.shuffle(&mut rng);
        for split in splits {
            let index = clips.len();
            clips.push(SynthClip {
                clip: LabeledClip {
                    path: clip_path(Task::Asc, index),
                    task: Task::Asc,
                    split,
                    labels: Labels::Scene(k),
                },
                recipe: Recipe::Scene {
                    center: center * rng.random_range(0.95..1.05),
                    am_rate: AscSynth::am_rate(k),
                },
                seed: rng.random(),
            });
        }
    }
    Ok(SynthDataset {
        task: Task::Asc,
        sample_rate: cfg.sample_rate,
        duration: cfg.duration,
        clips,
    })
}

pub fn synth_ust(cfg: &UstSynth, seed: u64) -> Result<SynthDataset> {
    if cfg.n_classes == 0 || cfg.n_clips == 0 || !(cfg.duration.is_finite() && cfg.duration > 0.0) {
        return Err(Error::Config(format!("degenerate tagging generator {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (cfg.train_fraction * cfg.n_clips as f64).round() as usize;
    let max_events = cfg.n_classes.min(3);
    let clips = (0..cfg.n_clips)
        .map(|index| {
            let size = rng.random_range(1..=max_events);
            let mut classes: Vec<usize> = (0..cfg.n_classes).collect();
            classes.shuffle(&mut rng);
            classes.truncate(size);
            classes.sort_unstable();
            let mut tags = vec![false; cfg.n_classes];
            classes.iter().for_each(|&c| tags[c] = true);
            SynthClip {
                clip: LabeledClip {
                    path: clip_path(Task::Ust, index),
                    task: Task::Ust,
                    split: if index < n_train { Split::Train } else { Split::Test },
                    labels: Labels::Tags(tags),
                },
                recipe: Recipe::Events { classes },
                seed: rng.random(),
            }
        })
        .collect();
    Ok(SynthDataset {
        task: Task::Ust,
        sample_rate: cfg.sample_rate,
        duration: cfg.duration,
        clips,
    })
}

pub fn synth_asd(cfg: &AsdSynth, seed: u64) -> Result<SynthDataset> {
    let test_normals = 2 * cfg.test_normals_per_domain;
    if cfg.sections < 2 || !(cfg.duration.is_finite() && cfg.duration > 0.0) || cfg.normals_per_section < test_normals + cfg.target_train {
        return Err(Error::Config(format!(
            "machine generator needs at least two sections and {} normals per section: {cfg:?}",
            test_normals + cfg.target_train
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_train = cfg.normals_per_section - test_normals - cfg.target_train;
    let mut clips = Vec::new();
    for s in 0..cfg.sections {
        let mut plan: Vec<(Split, Domain, bool)> = Vec::new();
        plan.extend(std::iter::repeat_n((Split::Train, Domain::Source, false), source_train));
        plan.extend(std::iter::repeat_n((Split::Train, Domain::Target, false), cfg.target_train));
        for d in [Domain::Source, Domain::Target] {
            plan.extend(std::iter::repeat_n((Split::Test, d, false), cfg.test_normals_per_domain));
        }
        let anomalies_source = cfg.anomalies_per_section.div_ceil(2);
        plan.extend(std::iter::repeat_n((Split::Test, Domain::Source, true), anomalies_source));
        plan.extend(std::iter::repeat_n(
            (Split::Test, Domain::Target, true),
            cfg.anomalies_per_section - anomalies_source,
        ));
        for (split, domain, anomalous) in plan {
            let shift = if domain == Domain::Target { AsdSynth::TARGET_SHIFT } else { 1.0 };
            let f0 = AsdSynth::fundamental(s) * shift;
            let defect = anomalous.then(|| {
                let other = (s + rng.random_range(1..cfg.sections)) % cfg.sections;
                let other_f0 = AsdSynth::fundamental(other) * shift;
                if rng.random_bool(0.5) {
                    Defect::Partials { other_f0 }
                } else {
                    Defect::Modulation {
                        rate: (other_f0 - f0).abs(),
                    }
                }
            });
            let index = clips.len();
            clips.push(SynthClip {
                clip: LabeledClip {
                    path: clip_path(Task::Asd, index),
                    task: Task::Asd,
                    split,
                    labels: Labels::Machine {
                        section: s,
                        domain,
                        anomalous,
                    },
                },
                recipe: Recipe::Machine { f0, defect },
                seed: rng.random(),
            });
        }
    }
    Ok(SynthDataset {
        task: Task::Asd,
        sample_rate: cfg.sample_rate,
        duration: cfg.duration,
        clips,
    })
}

impl SynthDataset {
    pub fn render(&self, index: usize) -> AudioClip {
        self.clips[index].render(self.sample_rate, self.duration)
    }

    pub fn manifest(&self, root: &Path) -> Manifest {
        Manifest {
            root: root.to_path_buf(),
            clips: self.clips.iter().map(|c| c.clip.clone()).collect(),
        }
    }

    /// Writes every clip as WAV plus `manifest.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let manifest = self.manifest(dir);
        for (i, c) in self.clips.iter().enumerate() {
            super::write_wav(&dir.join(&c.clip.path), &self.render(i))?;
        }
        manifest.save(&dir.join("manifest.jsonl"))?;
        Ok(manifest)
    }

    /// Clip counts keyed by (split, label description).
    pub fn summary(&self) -> BTreeMap<(Split, String), usize> {
        summarize(self.clips.iter().map(|c| &c.clip))
    }
}

pub fn summarize<'a>(clips: impl Iterator<Item = &'a LabeledClip>) -> BTreeMap<(Split, String), usize> {
    let mut m = BTreeMap::new();
    for c in clips {
        let keys: Vec<String> = match &c.labels {
            Labels::Scene(k) => vec![format!("class{k}")],
            Labels::Tags(t) => t
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(k, _)| format!("tag{k}"))
                .collect(),
            Labels::Machine {
                section,
                domain,
                anomalous,
            } => vec![format!(
                "section{section}/{domain}/{}",
                if *anomalous { "anomaly" } else { "normal" }
            )],
        };
        for k in keys {
            *m.entry((c.split, k)).or_insert(0) += 1;
        }
    }
    m
}

/// Mean over frames of geometric over arithmetic mean of the power spectrum.
pub fn spectral_flatness(samples: &[f64], window: usize, hop: usize) -> Result<f64> {
    let p = stft_power(samples, window, hop)?;
    let mut total = 0.0;
    for r in 0..p.rows() {
        let row = p.row(r);
        let n = row.len() as f64;
        let arith = row.iter().sum::<f64>() / n;
        let geo = (row.iter().map(|v| (v + 1e-20).ln()).sum::<f64>() / n).exp();
        total += if arith > 0.0 { geo / arith } else { 0.0 };
    }
    Ok(total / p.rows() as f64)
}
