//! Optimization and evaluation drivers.

mod adam;
mod evaluate;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrans_autodiff::{BatchNormMode, Scalar, Tape, Tensor};

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use evaluate::{
    clip_logits, evaluate, evaluate_checkpoint, predict_windows, section_probabilities, PAUC_MAX_FPR,
};

use crate::augment::{self, FMixConfig, SpecAugmentConfig};
use crate::dataset::Example;
use crate::features::ASD_WINDOW;
use crate::matrix::Matrix;
use crate::model::SETransModel;
use crate::objectives::{argmax_rows, macro_acc, macro_auprc};
use crate::task::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Augmentation {
    None,
    SpecAugment(SpecAugmentConfig),
    Mixup { alpha: f64 },
    FMix(FMixConfig),
}

impl Augmentation {
    /// Default parameters for a method named `none`, `specaugment`, `mixup` or `fmix`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Ok(Augmentation::None),
            "specaugment" => Ok(Augmentation::SpecAugment(SpecAugmentConfig::default())),
            "mixup" => Ok(Augmentation::Mixup { alpha: 1.0 }),
            "fmix" => Ok(Augmentation::FMix(FMixConfig::default())),
            other => Err(Error::Config(format!(
                "unknown augmentation {other:?} (expected none, specaugment, mixup or fmix)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::SpecAugment(_) => "specaugment",
            Augmentation::Mixup { .. } => "mixup",
            Augmentation::FMix(_) => "fmix",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub augment: Augmentation,
    pub seed: u64,
    /// Epochs between checkpoints; `None` writes only the final one.
    pub checkpoint_every: Option<usize>,
    /// Context windows drawn per clip and epoch for anomaly detection; `None` uses all.
    pub windows_per_clip: Option<usize>,
    /// Stop once the train metric reaches this value.
    pub stop_at_metric: Option<f64>,
    /// Compute the eval-mode train metric after every epoch.
    pub track_metric: bool,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        TrainConfig {
            task,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            augment: Augmentation::None,
            seed: crate::DEFAULT_SEED,
            checkpoint_every: None,
            windows_per_clip: None,
            stop_at_metric: None,
            track_metric: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.windows_per_clip == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config("windows_per_clip and checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 0 is the untrained model on un-augmented data.
    pub epoch: usize,
    pub loss: f64,
    /// Macro accuracy (scene, section) or macro AUPRC (tags) on the training data, eval mode.
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,metric\n");
        for e in &self.epochs {
            let metric = e.metric.map(|m| m.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{metric}", e.epoch, e.loss).expect("writing to a String");
        }
        s
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// One network input: a window of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Item {
    example: usize,
    start: usize,
}

fn check_contract<T: Scalar>(model: &SETransModel<T>, task: Task, data: &[Example]) -> Result<()> {
    let cfg = model.config();
    for (i, ex) in data.iter().enumerate() {
        let (frames, bands) = ex.features.shape();
        let ok = match task {
            Task::Asd => frames >= ASD_WINDOW && bands == cfg.input_bands,
            _ => (frames, bands) == (cfg.input_frames, cfg.input_bands),
        };
        if !ok {
            return Err(Error::Input(format!(
                "example {i} has features {frames}x{bands}, which the {task} model ({}x{}) cannot take",
                cfg.input_frames, cfg.input_bands
            )));
        }
        ex.target(cfg.n_classes)?;
    }
    Ok(())
}

fn window(ex: &Example, start: usize, frames: usize) -> Matrix {
    if start == 0 && ex.features.rows() == frames {
        ex.features.clone()
    } else {
        ex.features.slice_rows(start, frames)
    }
}

fn epoch_items<R: Rng>(task: Task, data: &[Example], per_clip: Option<usize>, rng: &mut R) -> Vec<Item> {
    let mut items = Vec::new();
    for (example, ex) in data.iter().enumerate() {
        let mut starts = ex.window_starts(task);
        if let Some(k) = per_clip.filter(|&k| k < starts.len()) {
            starts.shuffle(rng);
            starts.truncate(k);
            starts.sort_unstable();
        }
        items.extend(starts.into_iter().map(|start| Item { example, start }));
    }
    items
}

fn batch_targets<T: Scalar>(targets: &[Vec<f64>]) -> Result<Tensor<T>> {
    let n = targets[0].len();
    let flat: Vec<f64> = targets.concat();
    Ok(Tensor::from_f64([targets.len(), n], &flat)?)
}

/// Mixes each batch member with a randomly paired partner.
fn augment_batch<R: Rng>(
    aug: &Augmentation,
    inputs: &mut [Matrix],
    targets: &mut [Vec<f64>],
    rng: &mut R,
) -> Result<()> {
    let partners: Vec<usize> = {
        let mut p: Vec<usize> = (0..inputs.len()).collect();
        if !matches!(aug, Augmentation::None | Augmentation::SpecAugment(_)) {
            p.shuffle(rng);
        }
        p
    };
    let (orig_x, orig_y) = (inputs.to_vec(), targets.to_vec());
    for b in 0..inputs.len() {
        let j = partners[b];
        match aug {
            Augmentation::None => {}
            Augmentation::SpecAugment(cfg) => inputs[b] = augment::spec_augment(&orig_x[b], cfg, rng).0,
            Augmentation::Mixup { alpha } => {
                let out = augment::mixup(&orig_x[b], &orig_x[j], &orig_y[b], &orig_y[j], *alpha, rng)?;
                inputs[b] = out.mixed;
                targets[b] = out.targets;
            }
            Augmentation::FMix(cfg) => {
                let out = augment::fmix(&orig_x[b], &orig_x[j], cfg, rng)?;
                // Both losses are linear in the target, so weighting them by
                // the mask area equals the loss on area-mixed targets.
                targets[b] = augment::mix_targets(&orig_y[b], &orig_y[j], out.lambda);
                inputs[b] = out.mixed;
            }
        }
    }
    Ok(())
}

fn task_loss<T: Scalar>(tape: &mut Tape<T>, task: Task, logits: setrans_autodiff::Var, targets: &Tensor<T>) -> Result<setrans_autodiff::Var> {
    Ok(if task.is_multilabel() {
        tape.binary_cross_entropy(logits, targets)?
    } else {
        tape.cross_entropy(logits, targets)?
    })
}

/// Mean loss over `items` with batch statistics on a copy of the running stats; no update.
fn probe_loss<T: Scalar>(model: &SETransModel<T>, task: Task, data: &[Example], items: &[Item], batch: usize) -> Result<f64> {
    let frames = model.config().input_frames;
    let n = model.config().n_classes;
    let mut total = 0.0;
    for chunk in items.chunks(batch) {
        let xs: Vec<Matrix> = chunk.iter().map(|it| window(&data[it.example], it.start, frames)).collect();
        let ys = chunk.iter().map(|it| data[it.example].target(n)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Matrix> = xs.iter().collect();
        let mut tape = Tape::new();
        let x = tape.leaf(model.input_tensor(&refs)?, false);
        let mut stats = model.stats.clone();
        let mode = if chunk.len() > 1 { BatchNormMode::Train } else { BatchNormMode::Eval };
        let trace = model.network.forward(&mut tape, &model.params, &mut stats, x, mode)?;
        let loss = task_loss(&mut tape, task, trace.logits, &batch_targets(&ys)?)?;
        total += tape.value(loss).item().to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Eval-mode training metric over `items`.
fn train_metric<T: Scalar>(model: &SETransModel<T>, task: Task, data: &[Example], items: &[Item], batch: usize) -> Result<f64> {
    let frames = model.config().input_frames;
    let n = model.config().n_classes;
    let xs: Vec<Matrix> = items.iter().map(|it| window(&data[it.example], it.start, frames)).collect();
    let logits = evaluate::batched_logits(model, &xs, batch)?;
    if task.is_multilabel() {
        let ys = items.iter().map(|it| data[it.example].target(n)).collect::<Result<Vec<_>>>()?;
        let truths = Matrix::from_rows(&ys)?;
        let probs = Matrix::new(logits.rows(), n, logits.data().iter().map(|&l| sigmoid(l)).collect())?;
        Ok(macro_auprc(&probs, &truths)?.0)
    } else {
        let truth: Vec<usize> = items
            .iter()
            .map(|it| data[it.example].class().expect("single-label example"))
            .collect();
        macro_acc(&argmax_rows(&logits), &truth, n)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains `model` in place. `on_epoch` runs after every completed epoch and
/// receives the log row and the model (for checkpointing).
pub fn train<T: Scalar>(
    model: &mut SETransModel<T>,
    data: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &SETransModel<T>) -> Result<()>,
) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    let task = config.task;
    check_contract(model, task, data)?;
    let n = model.config().n_classes;
    let frames = model.config().input_frames;
    // Separate streams keep shuffling identical across augmentation arms.
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(2);
    let mut adam = AdamState::new(&model.params);
    let mut log = TrainLog::default();

    // The probe sees the same window sampling as a training epoch, drawn
    // from a copy of the ordering stream so training order is unaffected.
    let probe: Vec<Item> = epoch_items(task, data, config.windows_per_clip, &mut order_rng.clone());
    let initial = EpochLog {
        epoch: 0,
        loss: probe_loss(model, task, data, &probe, config.batch_size)?,
        metric: if config.track_metric {
            Some(train_metric(model, task, data, &probe, config.batch_size)?)
        } else {
            None
        },
    };
    log::info!("epoch 0: loss {:.6}", initial.loss);
    log.epochs.push(initial);
    on_epoch(&initial, model)?;

    for epoch in 1..=config.epochs {
        let mut items = epoch_items(task, data, config.windows_per_clip, &mut order_rng);
        items.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (bi, chunk) in items.chunks(config.batch_size).enumerate() {
            let mut xs: Vec<Matrix> = chunk.iter().map(|it| window(&data[it.example], it.start, frames)).collect();
            let mut ys = chunk.iter().map(|it| data[it.example].target(n)).collect::<Result<Vec<_>>>()?;
            augment_batch(&config.augment, &mut xs, &mut ys, &mut aug_rng)?;
            let refs: Vec<&Matrix> = xs.iter().collect();
            let mut tape = Tape::new();
            let x = tape.leaf(model.input_tensor(&refs)?, false);
            // A single-example batch has no batch statistics to normalize with.
            let trace = if chunk.len() > 1 {
                model.forward_train(&mut tape, x)?
            } else {
                model.forward_eval(&mut tape, x)?
            };
            let loss = task_loss(&mut tape, task, trace.logits, &batch_targets(&ys)?)?;
            let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("loss {value} at epoch {epoch}, batch {bi}")));
            }
            total += value * chunk.len() as f64;
            model.params.zero_grad();
            tape.backward_into(loss, &mut model.params)?;
            adam.step(&mut model.params, config.learning_rate);
        }
        let metric = if config.track_metric {
            Some(train_metric(model, task, data, &items, config.batch_size)?)
        } else {
            None
        };
        let row = EpochLog {
            epoch,
            loss: total / items.len() as f64,
            metric,
        };
        log::info!("epoch {epoch}: loss {:.6} metric {:?}", row.loss, row.metric);
        log.epochs.push(row);
        on_epoch(&row, model)?;
        if let (Some(goal), Some(m)) = (config.stop_at_metric, metric) {
            if m >= goal {
                break;
            }
        }
    }
    Ok(log)
}
