use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrans::augment::{
    apply_bands, apply_mask, binarize_top_lambda, fmix, fmix_with_lambda, mask_cardinality, mix_targets, mixup,
    mixup_with_lambda, radial_frequencies, sample_grey_image, spec_augment, Band, FMixConfig, SpecAugmentConfig,
};
use setrans::autodiff::Tensor;
use setrans::matrix::Matrix;
use setrans::objectives::{bce_loss, ce_loss};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap()
}

/// Power of each bin of a direct O(N^2) 2-D DFT.
fn dft2_power(m: &Matrix) -> Vec<f64> {
    let (t, f) = m.shape();
    let mut out = Vec::with_capacity(t * f);
    for u in 0..t {
        for v in 0..f {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..t {
                for j in 0..f {
                    let phase = -2.0 * std::f64::consts::PI * ((u * i) as f64 / t as f64 + (v * j) as f64 / f as f64);
                    re += m.get(i, j) * phase.cos();
                    im += m.get(i, j) * phase.sin();
                }
            }
            out.push(re * re + im * im);
        }
    }
    out
}

#[test]
fn grey_image_is_real_with_requested_shape() {
    let g = sample_grey_image(7, 5, 3.0, &mut rng(1)).unwrap();
    assert_eq!(g.shape(), (7, 5));
    assert!(g.data().iter().all(|v| v.is_finite()));
    assert!(sample_grey_image(0, 5, 3.0, &mut rng(1)).is_err());
}

#[test]
fn grey_image_energy_concentrates_at_low_frequencies() {
    let (t, f) = (16, 12);
    let freqs = radial_frequencies(t, f);
    let mut order: Vec<usize> = (0..t * f).collect();
    order.sort_by(|&a, &b| freqs[a].total_cmp(&freqs[b]));
    let quart = t * f / 4;
    let (mut low, mut high) = (0.0, 0.0);
    for seed in 0..100 {
        let power = dft2_power(&sample_grey_image(t, f, 3.0, &mut rng(seed)).unwrap());
        low += order[..quart].iter().map(|&i| power[i]).sum::<f64>();
        high += order[t * f - quart..].iter().map(|&i| power[i]).sum::<f64>();
    }
    assert!(low > high, "low {low} high {high}");
}

#[test]
fn grey_image_is_seed_deterministic() {
    let a = sample_grey_image(10, 8, 3.0, &mut rng(5)).unwrap();
    let b = sample_grey_image(10, 8, 3.0, &mut rng(5)).unwrap();
    let c = sample_grey_image(10, 8, 3.0, &mut rng(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn binarize_extremes() {
    let g = random_matrix(6, 9, 2);
    assert!(binarize_top_lambda(&g, 1.0).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(binarize_top_lambda(&g, 0.0).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(binarize_top_lambda(&g, 1.5).is_err());
}

#[test]
fn binarize_half_of_four_by_four_marks_eight_largest() {
    for seed in 0..20 {
        let g = random_matrix(4, 4, seed);
        let mask = binarize_top_lambda(&g, 0.5).unwrap();
        let mut sorted = g.data().to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let cutoff = sorted[7];
        assert_eq!(mask.data().iter().filter(|&&m| m == 1.0).count(), 8);
        for (v, m) in g.data().iter().zip(mask.data()) {
            assert_eq!(*m == 1.0, *v >= cutoff);
        }
    }
}

#[test]
fn binarize_breaks_ties_by_lower_index() {
    let g = Matrix::new(2, 3, vec![1.0, 2.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
    let mask = binarize_top_lambda(&g, 0.5).unwrap();
    assert_eq!(mask.data(), &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn fmix_extremes_return_one_input() {
    let xi = random_matrix(12, 10, 3);
    let xj = random_matrix(12, 10, 4);
    let cfg = FMixConfig::default();
    let one = fmix_with_lambda(&xi, &xj, 1.0, &cfg, &mut rng(0)).unwrap();
    assert_eq!(one.mixed, xi);
    assert_eq!(one.lambda, 1.0);
    let zero = fmix_with_lambda(&xi, &xj, 0.0, &cfg, &mut rng(0)).unwrap();
    assert_eq!(zero.mixed, xj);
    assert_eq!(zero.lambda, 0.0);
}

#[test]
fn fmix_mixes_cellwise_without_interpolation() {
    let xi = random_matrix(20, 16, 5);
    let xj = random_matrix(20, 16, 6);
    for seed in 0..50 {
        let out = fmix(&xi, &xj, &FMixConfig::default(), &mut rng(seed)).unwrap();
        for k in 0..xi.data().len() {
            let m = out.mask.data()[k];
            assert!(m == 0.0 || m == 1.0);
            let want = if m == 1.0 { xi.data()[k] } else { xj.data()[k] };
            assert_eq!(out.mixed.data()[k].to_bits(), want.to_bits());
        }
        let ones = out.mask.data().iter().filter(|&&m| m == 1.0).count();
        assert_eq!(out.lambda, ones as f64 / 320.0);
    }
}

#[test]
fn fmix_rejects_mismatched_shapes() {
    let cfg = FMixConfig::default();
    assert!(fmix(&random_matrix(4, 4, 1), &random_matrix(4, 5, 1), &cfg, &mut rng(0)).is_err());
    assert!(apply_mask(&random_matrix(4, 4, 1), &random_matrix(4, 4, 2), &Matrix::zeros(3, 4)).is_err());
    let bad = FMixConfig {
        decay_power: 0.0,
        alpha: 1.0,
    };
    assert!(fmix(&random_matrix(4, 4, 1), &random_matrix(4, 4, 2), &bad, &mut rng(0)).is_err());
}

#[test]
fn fmix_is_seed_deterministic() {
    let xi = random_matrix(8, 8, 1);
    let xj = random_matrix(8, 8, 2);
    let cfg = FMixConfig::default();
    assert_eq!(fmix(&xi, &xj, &cfg, &mut rng(9)).unwrap(), fmix(&xi, &xj, &cfg, &mut rng(9)).unwrap());
}

#[test]
fn mixed_targets_weight_the_loss_by_area() {
    // Both losses are linear in the target, so mixing targets equals mixing losses.
    let mut r = rng(11);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..3.0)).collect();
        let logits = Tensor::new([2, 3], logits).unwrap();
        let yi = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let yj = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let lambda: f64 = r.random();
        let mixed = Tensor::new([2, 3], mix_targets(&yi, &yj, lambda)).unwrap();
        let ti = Tensor::new([2, 3], yi.to_vec()).unwrap();
        let tj = Tensor::new([2, 3], yj.to_vec()).unwrap();
        let ce = ce_loss(&logits, &mixed).unwrap();
        let want = lambda * ce_loss(&logits, &ti).unwrap() + (1.0 - lambda) * ce_loss(&logits, &tj).unwrap();
        assert!((ce - want).abs() < 1e-12);
        let bce = bce_loss(&logits, &mixed).unwrap();
        let want = lambda * bce_loss(&logits, &ti).unwrap() + (1.0 - lambda) * bce_loss(&logits, &tj).unwrap();
        assert!((bce - want).abs() < 1e-12);
    }
}

#[test]
fn mixup_examples() {
    let xi = random_matrix(5, 4, 1);
    let xj = random_matrix(5, 4, 2);
    let out = mixup_with_lambda(&xi, &xj, &[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
    assert_eq!(out.mixed, xi);
    assert_eq!(out.targets, vec![1.0, 0.0]);

    let zeros = Matrix::zeros(3, 3);
    let twos = Matrix::new(3, 3, vec![2.0; 9]).unwrap();
    let half = mixup_with_lambda(&zeros, &twos, &[1.0], &[0.0], 0.5).unwrap();
    assert!(half.mixed.data().iter().all(|&v| v == 1.0));
    assert_eq!(half.targets, vec![0.5]);
    assert!(mixup_with_lambda(&xi, &zeros, &[1.0], &[0.0], 0.5).is_err());
}

#[test]
fn mixup_is_seed_deterministic() {
    let xi = random_matrix(5, 4, 1);
    let xj = random_matrix(5, 4, 2);
    let a = mixup(&xi, &xj, &[1.0], &[0.0], 0.4, &mut rng(3)).unwrap();
    let b = mixup(&xi, &xj, &[1.0], &[0.0], 0.4, &mut rng(3)).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.lambda));
}

#[test]
fn spec_augment_with_zero_width_is_identity() {
    let x = random_matrix(30, 20, 1);
    let cfg = SpecAugmentConfig {
        max_width_fraction: 0.0,
        ..SpecAugmentConfig::default()
    };
    let (out, bands) = spec_augment(&x, &cfg, &mut rng(0));
    assert_eq!(out, x);
    assert!(bands.iter().all(|b| b.width == 0));
}

#[test]
fn spec_augment_zeroes_exactly_the_drawn_bands() {
    let x = Matrix::new(64, 40, (0..64 * 40).map(|i| 1.0 + i as f64).collect()).unwrap();
    for seed in 0..100 {
        let (out, bands) = spec_augment(&x, &SpecAugmentConfig::default(), &mut rng(seed));
        assert_eq!(bands.len(), 4);
        let mut zeroed = 0;
        for r in 0..64 {
            for c in 0..40 {
                let masked = bands.iter().any(|b| {
                    let i = if b.time_axis { r } else { c };
                    (b.start..b.start + b.width).contains(&i)
                });
                if masked {
                    assert_eq!(out.get(r, c), 0.0);
                    zeroed += 1;
                } else {
                    assert_eq!(out.get(r, c), x.get(r, c));
                }
            }
        }
        assert!(zeroed as f64 / (64.0 * 40.0) <= 0.5);
    }
}

#[test]
fn explicit_bands_zero_rows_and_columns() {
    let x = Matrix::new(3, 3, vec![1.0; 9]).unwrap();
    let out = apply_bands(
        &x,
        &[
            Band {
                time_axis: true,
                start: 0,
                width: 1,
            },
            Band {
                time_axis: false,
                start: 2,
                width: 1,
            },
        ],
    );
    assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn mask_cardinality_over_a_thousand_draws() {
    let mut draws = rng(2024);
    let cfg = FMixConfig::default();
    let (t, f) = (24, 16);
    let xi = Matrix::zeros(t, f);
    let xj = Matrix::new(t, f, vec![1.0; t * f]).unwrap();
    for _ in 0..1000 {
        let lambda: f64 = draws.random();
        let seed: u64 = draws.random();
        let out = fmix_with_lambda(&xi, &xj, lambda, &cfg, &mut rng(seed)).unwrap();
        let ones = out.mask.data().iter().filter(|&&m| m == 1.0).count();
        assert_eq!(ones, (lambda * (t * f) as f64).round() as usize);
        assert_eq!(ones, mask_cardinality(lambda, t * f));
    }
}

proptest! {
    #[test]
    fn mixup_is_symmetric_under_swap(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
        let xi = random_matrix(4, 3, seed);
        let xj = random_matrix(4, 3, seed + 1);
        let a = mixup_with_lambda(&xi, &xj, &[1.0, 0.0], &[0.0, 1.0], lambda).unwrap();
        let b = mixup_with_lambda(&xj, &xi, &[0.0, 1.0], &[1.0, 0.0], 1.0 - lambda).unwrap();
        for (u, v) in a.mixed.data().iter().zip(b.mixed.data()) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
        for (u, v) in a.targets.iter().zip(&b.targets) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixup_stays_between_its_inputs(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
        let xi = random_matrix(4, 3, seed);
        let xj = random_matrix(4, 3, seed + 7);
        let out = mixup_with_lambda(&xi, &xj, &[1.0], &[0.0], lambda).unwrap();
        for k in 0..12 {
            let (a, b) = (xi.data()[k], xj.data()[k]);
            let v = out.mixed.data()[k];
            prop_assert!(a.min(b) - 1e-12 <= v && v <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn fmix_mask_partitions_the_grid(seed in 0u64..1000, lambda in 0.0f64..=1.0, t in 1usize..12, f in 1usize..12) {
        let xi = random_matrix(t, f, seed);
        let xj = random_matrix(t, f, seed + 3);
        let out = fmix_with_lambda(&xi, &xj, lambda, &FMixConfig::default(), &mut rng(seed)).unwrap();
        prop_assert_eq!(out.mask.data().iter().filter(|&&m| m == 1.0).count(), mask_cardinality(lambda, t * f));
        for k in 0..t * f {
            let m = out.mask.data()[k];
            prop_assert_eq!(m + (1.0 - m), 1.0);
            let want = if m == 1.0 { xi.data()[k] } else { xj.data()[k] };
            prop_assert_eq!(out.mixed.data()[k].to_bits(), want.to_bits());
        }
    }
}
