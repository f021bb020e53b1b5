//! Audio-to-feature pipeline producing labeled spectrograms.

use crate::data::synth::SynthDataset;
use crate::data::{read_wav_at, Labels, Manifest, Split};
use crate::features::{LogMelExtractor, ASD_SHIFT, ASD_WINDOW};
use crate::matrix::Matrix;
use crate::task::Task;
use crate::{Error, Result};

/// A log-mel spectrogram with the labels of its clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Matrix,
    pub labels: Labels,
}

impl Example {
    /// Target distribution (one-hot) or tag vector over `n_classes`.
    pub fn target(&self, n_classes: usize) -> Result<Vec<f64>> {
        let mut y = vec![0.0; n_classes];
        match &self.labels {
            Labels::Tags(t) if t.len() == n_classes => {
                for (v, &on) in y.iter_mut().zip(t) {
                    *v = on as u8 as f64;
                }
            }
            Labels::Scene(k) | Labels::Machine { section: k, .. } if *k < n_classes => y[*k] = 1.0,
            other => {
                return Err(Error::Input(format!("labels {other:?} do not fit {n_classes} classes")))
            }
        }
        Ok(y)
    }

    pub fn class(&self) -> Option<usize> {
        match self.labels {
            Labels::Scene(k) | Labels::Machine { section: k, .. } => Some(k),
            Labels::Tags(_) => None,
        }
    }

    /// Start frames of the windows the network sees for this example.
    pub fn window_starts(&self, task: Task) -> Vec<usize> {
        match task {
            Task::Asd => {
                let n = crate::features::window_count(self.features.rows(), ASD_WINDOW, ASD_SHIFT);
                (0..n).map(|k| k * ASD_SHIFT).collect()
            }
            _ => vec![0],
        }
    }
}

/// Extracts features for the clips of `manifest` in `split` (all clips when `None`).
pub fn examples_from_manifest(manifest: &Manifest, split: Option<Split>, task: Task) -> Result<Vec<Example>> {
    let extractor = LogMelExtractor::new(task.feature_config())?;
    let rate = extractor.config().sample_rate;
    manifest
        .clips
        .iter()
        .filter(|c| split.is_none_or(|s| c.split == s))
        .map(|c| {
            if c.task != task {
                return Err(Error::Input(format!("manifest clip {} is {}, expected {task}", c.path.display(), c.task)));
            }
            let audio = read_wav_at(&manifest.resolve(c), rate)?;
            Ok(Example {
                features: extractor.extract(&audio)?.values,
                labels: c.labels.clone(),
            })
        })
        .collect()
}

/// Renders and extracts synthetic clips in memory.
pub fn examples_from_synth(ds: &SynthDataset, split: Option<Split>) -> Result<Vec<Example>> {
    let extractor = LogMelExtractor::new(ds.task.feature_config())?;
    ds.clips
        .iter()
        .enumerate()
        .filter(|(_, c)| split.is_none_or(|s| c.clip.split == s))
        .map(|(i, c)| {
            let audio = crate::data::resample_linear(&ds.render(i), extractor.config().sample_rate);
            Ok(Example {
                features: extractor.extract(&audio)?.values,
                labels: c.clip.labels.clone(),
            })
        })
        .collect()
}
