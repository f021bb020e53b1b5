//! Reverse-mode gradients of every primitive against central finite
//! differences (64-bit, eps = 1e-3), 10 random seeds each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrans_autodiff::check::{check_inputs, GradCheck};
use setrans_autodiff::{BatchNormMode, RunningStats, Result, Tape, Tensor, Var};

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so kinks are never crossed by a perturbation.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Projects an arbitrary output to a scalar with fixed random weights, so
/// every output element contributes a distinct cotangent.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let shape = tape.value(out).shape().to_vec();
    let w = uniform(&mut rng, &shape, -1.0, 1.0);
    let w = tape.leaf(w, false);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn run<G, F>(name: &str, mut gen: G, f: F)
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Copy,
{
    let mut worst: Option<GradCheck> = None;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = gen(&mut rng);
        let report = check_inputs(&inputs, EPS, |tape, vars| {
            let out = f(tape, vars)?;
            if tape.value(out).len() == 1 {
                Ok(out)
            } else {
                project(tape, out, seed)
            }
        })
        .unwrap();
        assert!(report.checked > 0);
        match &mut worst {
            Some(w) => w.merge(report),
            None => worst = Some(report),
        }
    }
    let worst = worst.unwrap();
    assert!(
        worst.max_rel_error <= TOL,
        "{name}: max relative error {:.3e} at {:?}",
        worst.max_rel_error,
        worst.worst
    );
}

#[test]
fn conv2d() {
    run(
        "conv2d",
        |r| {
            vec![
                uniform(r, &[2, 2, 4, 5], -1.0, 1.0),
                uniform(r, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
            ]
        },
        |t, v| t.conv2d(v[0], v[1], v[2]),
    );
}

#[test]
fn batch_norm_train_mode() {
    run(
        "batch_norm2d/train",
        |r| {
            vec![
                uniform(r, &[2, 3, 3, 2], -2.0, 2.0),
                uniform(r, &[3], 0.5, 1.5),
                uniform(r, &[3], -1.0, 1.0),
            ]
        },
        |t, v| {
            let mut stats = RunningStats::new(3);
            t.batch_norm2d(v[0], v[1], v[2], &mut stats, BatchNormMode::Train)
        },
    );
}

#[test]
fn batch_norm_eval_mode() {
    run(
        "batch_norm2d/eval",
        |r| {
            vec![
                uniform(r, &[2, 3, 3, 2], -2.0, 2.0),
                uniform(r, &[3], 0.5, 1.5),
                uniform(r, &[3], -1.0, 1.0),
            ]
        },
        |t, v| {
            let mut stats = RunningStats {
                mean: vec![0.3, -0.2, 0.1],
                var: vec![1.5, 0.7, 2.0],
            };
            t.batch_norm2d(v[0], v[1], v[2], &mut stats, BatchNormMode::Eval)
        },
    );
}

#[test]
fn layer_norm() {
    run(
        "layer_norm",
        |r| {
            vec![
                uniform(r, &[2, 3, 6], -2.0, 2.0),
                uniform(r, &[6], 0.5, 1.5),
                uniform(r, &[6], -1.0, 1.0),
            ]
        },
        |t, v| t.layer_norm(v[0], v[1], v[2]),
    );
}

#[test]
fn linear_with_and_without_bias() {
    run(
        "linear",
        |r| {
            vec![
                uniform(r, &[2, 3, 4], -1.0, 1.0),
                uniform(r, &[4, 5], -1.0, 1.0),
                uniform(r, &[5], -1.0, 1.0),
            ]
        },
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    );
    run(
        "linear/no-bias",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)],
        |t, v| t.linear(v[0], v[1], None),
    );
}

#[test]
fn activations() {
    run("relu", |r| vec![away_from_zero(r, &[3, 7])], |t, v| Ok(t.relu(v[0])));
    run(
        "sigmoid",
        |r| vec![uniform(r, &[3, 7], -4.0, 4.0)],
        |t, v| Ok(t.sigmoid(v[0])),
    );
    run(
        "softmax",
        |r| vec![uniform(r, &[3, 7], -3.0, 3.0)],
        |t, v| Ok(t.softmax(v[0])),
    );
}

#[test]
fn pooling() {
    run(
        "avg_pool2d",
        |r| vec![uniform(r, &[2, 2, 4, 6], -1.0, 1.0)],
        |t, v| t.avg_pool2(v[0]),
    );
    run(
        "adaptive_avg_pool2d",
        |r| vec![uniform(r, &[2, 2, 11, 3], -1.0, 1.0)],
        |t, v| t.adaptive_avg_pool(v[0], 4),
    );
    run(
        "mean_spatial",
        |r| vec![uniform(r, &[2, 3, 3, 4], -1.0, 1.0)],
        |t, v| t.mean_spatial(v[0]),
    );
    run(
        "channels_to_sequence",
        |r| vec![uniform(r, &[2, 3, 4, 1], -1.0, 1.0)],
        |t, v| t.channels_to_sequence(v[0]),
    );
}

#[test]
fn max_over_time() {
    run(
        "max_over_time",
        |r| {
            // distinct values on a 0.05 grid so no perturbation flips an argmax
            let mut vals: Vec<f64> = (0..2 * 5 * 3).map(|i| i as f64 * 0.05).collect();
            for i in (1..vals.len()).rev() {
                vals.swap(i, r.random_range(0..=i));
            }
            vec![Tensor::new([2, 5, 3], vals).unwrap()]
        },
        |t, v| t.max_over_time(v[0]),
    );
}

#[test]
fn scale_channels() {
    run(
        "scale_channels",
        |r| {
            vec![
                uniform(r, &[2, 3, 2, 3], -1.0, 1.0),
                uniform(r, &[2, 3], 0.0, 1.0),
            ]
        },
        |t, v| t.scale_channels(v[0], v[1]),
    );
}

#[test]
fn attention() {
    for heads in [1, 2, 4] {
        run(
            "attention",
            |r| {
                vec![
                    uniform(r, &[2, 5, 8], -1.0, 1.0),
                    uniform(r, &[2, 5, 8], -1.0, 1.0),
                    uniform(r, &[2, 5, 8], -1.0, 1.0),
                ]
            },
            |t, v| t.attention(v[0], v[1], v[2], heads),
        );
    }
}

#[test]
fn elementwise_and_reductions() {
    run(
        "add",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)],
        |t, v| t.add(v[0], v[1]),
    );
    run(
        "mul",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)],
        |t, v| t.mul(v[0], v[1]),
    );
    run("sum", |r| vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| Ok(t.sum(v[0])));
}

#[test]
fn losses() {
    run(
        "cross_entropy",
        |r| vec![uniform(r, &[4, 5], -3.0, 3.0)],
        |t, v| {
            // soft targets, rows sum to one
            let mut y = vec![0.0; 20];
            for row in 0..4 {
                y[row * 5 + row] = 0.7;
                y[row * 5 + (row + 2) % 5] = 0.3;
            }
            t.cross_entropy(v[0], &Tensor::new([4, 5], y).unwrap())
        },
    );
    run(
        "binary_cross_entropy",
        |r| vec![uniform(r, &[4, 3], -3.0, 3.0)],
        |t, v| {
            let y: Vec<f64> = (0..12).map(|i| [0.0, 1.0, 0.25][i % 3]).collect();
            t.binary_cross_entropy(v[0], &Tensor::new([4, 3], y).unwrap())
        },
    );
}

#[test]
fn composite_chain_uses_shared_subexpressions() {
    // x feeds two branches; gradients must accumulate at the fork.
    run(
        "composite",
        |r| vec![uniform(r, &[1, 2, 4, 4], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -0.5, 0.5), uniform(r, &[2], -0.1, 0.1)],
        |t, v| {
            let c = t.conv2d(v[0], v[1], v[2])?;
            let s = t.sigmoid(c);
            let both = t.mul(s, c)?;
            let again = t.add(both, c)?;
            t.avg_pool2(again)
        },
    );
}
