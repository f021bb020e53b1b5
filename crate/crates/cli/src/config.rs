//! JSON run configuration for `train`.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use setrans::model::ModelConfig;
use setrans::training::{Augmentation, TrainConfig};
use setrans::Task;

use crate::{Mode, TrainArgs};

/// Every field is optional; missing ones keep the task defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub augment: Option<Augmentation>,
    pub checkpoint_every: Option<usize>,
    pub windows_per_clip: Option<usize>,
    pub stop_at_metric: Option<f64>,
    pub track_metric: Option<bool>,
    pub mode: Option<Mode>,
    pub channels: Option<[usize; 2]>,
    pub reduction: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub ffn: Option<usize>,
    pub seq_len: Option<usize>,
    pub positional_encoding: Option<bool>,
}

/// Fully resolved settings of one training run, saved next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub mode: Mode,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid run configuration", path.display()))
    }

    /// Layers defaults, this file and then command-line flags.
    pub fn resolve(&self, args: &TrainArgs, n_classes: usize) -> Result<Resolved> {
        let task: Task = args.task;
        let d = TrainConfig::new(task);
        let augment = match &args.augment {
            Some(name) => Augmentation::from_name(name)?,
            None => self.augment.unwrap_or(d.augment),
        };
        let train = TrainConfig {
            task,
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: args.batch_size.or(self.batch_size).unwrap_or(d.batch_size),
            epochs: args.epochs.or(self.epochs).unwrap_or(d.epochs),
            augment,
            seed: args.seed,
            checkpoint_every: self.checkpoint_every,
            windows_per_clip: self.windows_per_clip,
            stop_at_metric: self.stop_at_metric,
            track_metric: self.track_metric.unwrap_or(d.track_metric),
        };
        train.validate()?;
        let m = ModelConfig::for_task(task, n_classes);
        let model = ModelConfig {
            channels: self.channels.unwrap_or(m.channels),
            reduction: self.reduction.unwrap_or(m.reduction),
            heads: args.heads.or(self.heads).unwrap_or(m.heads),
            layers: args.layers.or(self.layers).unwrap_or(m.layers),
            ffn: args.ffn.or(self.ffn).unwrap_or(m.ffn),
            seq_len: self.seq_len.unwrap_or(m.seq_len),
            positional_encoding: self.positional_encoding.unwrap_or(m.positional_encoding),
            ..m
        };
        model.validate()?;
        Ok(Resolved {
            mode: args.mode.or(self.mode).unwrap_or(Mode::F32),
            train,
            model,
        })
    }
}
