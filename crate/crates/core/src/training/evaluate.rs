use setrans_autodiff::ops::activation::softmax_row;
use setrans_autodiff::Scalar;

use crate::data::{Checkpoint, Labels};
use crate::dataset::Example;
use crate::features::ASD_WINDOW;
use crate::matrix::Matrix;
use crate::model::SETransModel;
use crate::objectives::{anomaly_score, argmax_rows, AscReport, AsdReport, ClipScore, EvalReport, TieMode, UstReport};
use crate::task::Task;
use crate::{Error, Result};

/// Range of false-positive rates for partial AUC.
pub const PAUC_MAX_FPR: f64 = 0.1;

/// Eval-mode logits, one row per input.
pub(crate) fn batched_logits<T: Scalar>(model: &SETransModel<T>, xs: &[Matrix], batch: usize) -> Result<Matrix> {
    let n = model.config().n_classes;
    let mut out = Vec::with_capacity(xs.len() * n);
    for chunk in xs.chunks(batch.max(1)) {
        let refs: Vec<&Matrix> = chunk.iter().collect();
        out.extend(model.predict(&refs)?.to_f64());
    }
    Matrix::new(xs.len(), n, out)
}

/// Logits of whole-clip examples.
pub fn clip_logits<T: Scalar>(model: &SETransModel<T>, data: &[Example], batch: usize) -> Result<Matrix> {
    let xs: Vec<Matrix> = data.iter().map(|e| e.features.clone()).collect();
    batched_logits(model, &xs, batch)
}

/// Logits of every context window of one clip.
pub fn predict_windows<T: Scalar>(model: &SETransModel<T>, example: &Example, batch: usize) -> Result<Matrix> {
    let xs: Vec<Matrix> = example
        .window_starts(Task::Asd)
        .into_iter()
        .map(|s| example.features.slice_rows(s, ASD_WINDOW))
        .collect();
    if xs.is_empty() {
        return Err(Error::Input(format!(
            "{} frames hold no {ASD_WINDOW}-frame window",
            example.features.rows()
        )));
    }
    batched_logits(model, &xs, batch)
}

/// Softmax probability of the clip's own section, per window.
pub fn section_probabilities<T: Scalar>(model: &SETransModel<T>, example: &Example, batch: usize) -> Result<Vec<f64>> {
    let section = example
        .class()
        .ok_or_else(|| Error::Input("section probabilities need a machine clip".into()))?;
    let logits = predict_windows(model, example, batch)?;
    Ok((0..logits.rows())
        .map(|r| {
            let mut row = logits.row(r).to_vec();
            softmax_row(&mut row);
            row[section]
        })
        .collect())
}

pub fn evaluate<T: Scalar>(task: Task, model: &SETransModel<T>, data: &[Example], batch: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("no evaluation examples".into()));
    }
    let n = model.config().n_classes;
    match task {
        Task::Asc => {
            let logits = clip_logits(model, data, batch)?;
            let truths = data
                .iter()
                .map(|e| e.class().ok_or_else(|| Error::Input("scene example without a class".into())))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalReport::Asc(AscReport::new(argmax_rows(&logits), truths, n)?))
        }
        Task::Ust => {
            let logits = clip_logits(model, data, batch)?;
            let probs = Matrix::new(
                logits.rows(),
                n,
                logits.data().iter().map(|&l| super::sigmoid(l)).collect(),
            )?;
            let targets = data.iter().map(|e| e.target(n)).collect::<Result<Vec<_>>>()?;
            Ok(EvalReport::Ust(UstReport::new(probs, Matrix::from_rows(&targets)?, 0.5)?))
        }
        Task::Asd => {
            let clips = data
                .iter()
                .map(|e| {
                    let Labels::Machine {
                        section,
                        domain,
                        anomalous,
                    } = e.labels
                    else {
                        return Err(Error::Input("anomaly evaluation needs machine labels".into()));
                    };
                    let probs = section_probabilities(model, e, batch)?;
                    Ok(ClipScore {
                        section,
                        domain,
                        anomalous,
                        score: anomaly_score(&probs).expect("at least one window"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalReport::Asd(AsdReport::new(&clips, PAUC_MAX_FPR, TieMode::Strict)?))
        }
    }
}

/// [`evaluate`] after checking the checkpoint was trained for `task`.
pub fn evaluate_checkpoint<T: Scalar>(task: Task, ckpt: &Checkpoint<T>, data: &[Example], batch: usize) -> Result<EvalReport> {
    if ckpt.task != task {
        return Err(Error::Input(format!("checkpoint was trained for {}, not {task}", ckpt.task)));
    }
    evaluate(task, &ckpt.model, data, batch)
}
