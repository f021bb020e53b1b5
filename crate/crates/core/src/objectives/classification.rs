use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Samples whose truth is this class.
    pub support: usize,
}

impl ClassStats {
    /// Fraction of this class's samples that were predicted correctly.
    pub fn accuracy(&self) -> Option<f64> {
        (self.support > 0).then(|| self.tp as f64 / self.support as f64)
    }
}

/// Index of the largest entry of each row; the first wins ties.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            scores
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

fn check_labels(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::Input(format!("class {bad} out of range for {n_classes} classes")));
    }
    Ok(())
}

pub fn class_stats_multiclass(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<ClassStats>> {
    check_labels(pred, truth, n_classes)?;
    let mut stats = vec![ClassStats::default(); n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        stats[t].support += 1;
        if p == t {
            stats[t].tp += 1;
        } else {
            stats[p].fp += 1;
            stats[t].fn_ += 1;
        }
    }
    Ok(stats)
}

fn check_multilabel(scores: &Matrix, truths: &Matrix) -> Result<()> {
    if scores.shape() != truths.shape() {
        return Err(Error::Input(format!(
            "scores {:?} and truths {:?} differ in shape",
            scores.shape(),
            truths.shape()
        )));
    }
    Ok(())
}

/// Counts from `score >= threshold` decisions against binary truths.
pub fn class_stats_multilabel(scores: &Matrix, truths: &Matrix, threshold: f64) -> Result<Vec<ClassStats>> {
    check_multilabel(scores, truths)?;
    let mut stats = vec![ClassStats::default(); scores.cols()];
    for r in 0..scores.rows() {
        for (c, s) in stats.iter_mut().enumerate() {
            let positive = truths.get(r, c) > 0.5;
            let predicted = scores.get(r, c) >= threshold;
            s.support += positive as usize;
            match (predicted, positive) {
                (true, true) => s.tp += 1,
                (true, false) => s.fp += 1,
                (false, true) => s.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(stats)
}

/// Rows index truth, columns index prediction.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(pred, truth, n_classes)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean over classes present in `truth` of their per-class correct fraction.
pub fn macro_acc(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    let accs: Vec<f64> = class_stats_multiclass(pred, truth, n_classes)?
        .iter()
        .filter_map(ClassStats::accuracy)
        .collect();
    if accs.is_empty() {
        return Err(Error::Input("macro accuracy of an empty label set".into()));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// F1 of pooled counts, `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing predicted.
pub fn micro_f1(scores: &Matrix, truths: &Matrix, threshold: f64) -> Result<f64> {
    let stats = class_stats_multilabel(scores, truths, threshold)?;
    let (tp, fp, fn_) = stats
        .iter()
        .fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}
