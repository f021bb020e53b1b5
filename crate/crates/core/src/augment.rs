//! Spectrogram augmentation: FMix, mixup and SpecAugment.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FMixConfig {
    /// Spectral decay exponent of the low-pass filter.
    pub decay_power: f64,
    /// Mixing proportion is drawn from Beta(alpha, alpha).
    pub alpha: f64,
}

impl Default for FMixConfig {
    fn default() -> Self {
        FMixConfig {
            decay_power: 3.0,
            alpha: 1.0,
        }
    }
}

impl FMixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_power > 0.0 && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "fmix needs positive decay_power and alpha, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Signed DFT frequency of bin `i` out of `n`, in cycles per sample.
fn dft_freq(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n_f = n as f64;
    if i <= n_f / 2.0 {
        i / n_f
    } else {
        (i - n_f) / n_f
    }
}

/// Radial frequency of each bin of a `t` x `f` 2-D DFT, row-major.
pub fn radial_frequencies(t: usize, f: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * f);
    for i in 0..t {
        for j in 0..f {
            out.push(dft_freq(i, t).hypot(dft_freq(j, f)));
        }
    }
    out
}

/// In-place 2-D DFT over a row-major `rows` x `cols` buffer.
pub(crate) fn fft2(buf: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for r in buf.chunks_exact_mut(cols) {
        row_fft.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for (r, v) in column.iter_mut().enumerate() {
            *v = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for (r, v) in column.iter().enumerate() {
            buf[r * cols + c] = *v;
        }
    }
}

/// Low-pass filtered complex Gaussian noise, real part of its inverse DFT.
pub fn sample_grey_image<R: Rng + ?Sized>(t: usize, f: usize, decay_power: f64, rng: &mut R) -> Result<Matrix> {
    if t == 0 || f == 0 {
        return Err(Error::Input(format!("grey image needs positive dims, got {t}x{f}")));
    }
    let freqs = radial_frequencies(t, f);
    let floor = freqs
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let mut buf: Vec<Complex<f64>> = freqs
        .iter()
        .map(|&fr| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex::new(re, im) / fr.max(floor).powf(decay_power)
        })
        .collect();
    fft2(&mut buf, t, f, true);
    let scale = 1.0 / (t * f) as f64;
    Matrix::new(t, f, buf.iter().map(|c| c.re * scale).collect())
}

/// Number of ones a mask of proportion `lambda` carries over `cells` cells.
pub fn mask_cardinality(lambda: f64, cells: usize) -> usize {
    (lambda * cells as f64).round() as usize
}

/// Ones at the `round(lambda * T * F)` largest grey values; equal values resolve to the lower flat index.
pub fn binarize_top_lambda(grey: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("lambda {lambda} outside [0, 1]")));
    }
    let values = grey.data();
    let n = mask_cardinality(lambda, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = Matrix::zeros(grey.rows(), grey.cols());
    for &i in &order[..n] {
        mask.data_mut()[i] = 1.0;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FMixOutput {
    pub mixed: Matrix,
    pub mask: Matrix,
    /// Fraction of cells taken from the first input; weights its label's loss.
    pub lambda: f64,
}

/// `mask * xi + (1 - mask) * xj` for an explicit mask.
pub fn apply_mask(xi: &Matrix, xj: &Matrix, mask: &Matrix) -> Result<Matrix> {
    if xi.shape() != xj.shape() || xi.shape() != mask.shape() {
        return Err(Error::Input(format!(
            "fmix shapes differ: {:?}, {:?}, mask {:?}",
            xi.shape(),
            xj.shape(),
            mask.shape()
        )));
    }
    let data = xi
        .data()
        .iter()
        .zip(xj.data())
        .zip(mask.data())
        .map(|((&a, &b), &m)| if m == 1.0 { a } else { b })
        .collect();
    Matrix::new(xi.rows(), xi.cols(), data)
}

/// FMix with a given proportion `lambda`.
pub fn fmix_with_lambda<R: Rng + ?Sized>(
    xi: &Matrix,
    xj: &Matrix,
    lambda: f64,
    config: &FMixConfig,
    rng: &mut R,
) -> Result<FMixOutput> {
    config.validate()?;
    if xi.shape() != xj.shape() {
        return Err(Error::Input(format!(
            "fmix shapes differ: {:?} vs {:?}",
            xi.shape(),
            xj.shape()
        )));
    }
    let grey = sample_grey_image(xi.rows(), xi.cols(), config.decay_power, rng)?;
    let mask = binarize_top_lambda(&grey, lambda)?;
    let mixed = apply_mask(xi, xj, &mask)?;
    let ones = mask.data().iter().filter(|&&m| m == 1.0).count();
    Ok(FMixOutput {
        mixed,
        lambda: ones as f64 / mask.data().len() as f64,
        mask,
    })
}

pub fn fmix<R: Rng + ?Sized>(xi: &Matrix, xj: &Matrix, config: &FMixConfig, rng: &mut R) -> Result<FMixOutput> {
    config.validate()?;
    let lambda = sample_beta(config.alpha, rng)?;
    fmix_with_lambda(xi, xj, lambda, config, rng)
}

/// `lambda * yi + (1 - lambda) * yj`.
pub fn mix_targets(yi: &[f64], yj: &[f64], lambda: f64) -> Vec<f64> {
    yi.iter().zip(yj).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupOutput {
    pub mixed: Matrix,
    pub targets: Vec<f64>,
    pub lambda: f64,
}

pub fn mixup_with_lambda(xi: &Matrix, xj: &Matrix, yi: &[f64], yj: &[f64], lambda: f64) -> Result<MixupOutput> {
    if xi.shape() != xj.shape() || yi.len() != yj.len() {
        return Err(Error::Input("mixup operands differ in shape".into()));
    }
    let data = xi
        .data()
        .iter()
        .zip(xj.data())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(MixupOutput {
        mixed: Matrix::new(xi.rows(), xi.cols(), data)?,
        targets: mix_targets(yi, yj, lambda),
        lambda,
    })
}

pub fn mixup<R: Rng + ?Sized>(
    xi: &Matrix,
    xj: &Matrix,
    yi: &[f64],
    yj: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<MixupOutput> {
    let lambda = sample_beta(alpha, rng)?;
    mixup_with_lambda(xi, xj, yi, yj, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub freq_masks: usize,
    pub time_masks: usize,
    /// Largest band width as a fraction of the masked axis.
    pub max_width_fraction: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            freq_masks: 2,
            time_masks: 2,
            max_width_fraction: 0.125,
        }
    }
}

/// A contiguous band of rows (time) or columns (frequency) set to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub time_axis: bool,
    pub start: usize,
    pub width: usize,
}

fn draw_band<R: Rng + ?Sized>(dim: usize, fraction: f64, time_axis: bool, rng: &mut R) -> Band {
    let max = ((fraction * dim as f64).floor() as usize).min(dim);
    let width = rng.random_range(0..=max);
    let start = rng.random_range(0..=dim - width);
    Band {
        time_axis,
        start,
        width,
    }
}

pub fn apply_bands(x: &Matrix, bands: &[Band]) -> Matrix {
    let mut out = x.clone();
    for b in bands {
        for i in b.start..b.start + b.width {
            if b.time_axis {
                out.row_mut(i).fill(0.0);
            } else {
                for r in 0..out.rows() {
                    out.set(r, i, 0.0);
                }
            }
        }
    }
    out
}

/// Zero-filled frequency and time bands; returns the result and the bands drawn.
pub fn spec_augment<R: Rng + ?Sized>(x: &Matrix, config: &SpecAugmentConfig, rng: &mut R) -> (Matrix, Vec<Band>) {
    let mut bands = Vec::with_capacity(config.freq_masks + config.time_masks);
    for _ in 0..config.freq_masks {
        bands.push(draw_band(x.cols(), config.max_width_fraction, false, rng));
    }
    for _ in 0..config.time_masks {
        bands.push(draw_band(x.rows(), config.max_width_fraction, true, rng));
    }
    (apply_bands(x, &bands), bands)
}
