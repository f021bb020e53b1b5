use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// How a positive and a negative with equal scores count in AUC.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMode {
    /// Step function: a tie counts 0.
    #[default]
    Strict,
    /// A tie counts 0.5.
    Half,
}

fn check_finite(scores: &[f64], what: &str) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input(format!("{what} scores must be finite")));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sum over positives of the number of `neg` (ascending) below each score, ties per `tie`.
fn pair_wins(pos: &[f64], neg_sorted: &[f64], tie: TieMode) -> f64 {
    pos.iter()
        .map(|&p| {
            let below = neg_sorted.partition_point(|&n| n < p);
            let not_above = neg_sorted.partition_point(|&n| n <= p);
            match tie {
                TieMode::Strict => below as f64,
                TieMode::Half => below as f64 + 0.5 * (not_above - below) as f64,
            }
        })
        .sum()
}

/// Fraction of (positive, negative) pairs ranked correctly.
pub fn roc_auc(pos: &[f64], neg: &[f64], tie: TieMode) -> Result<f64> {
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("AUC needs at least one positive and one negative".into()));
    }
    Ok(pair_wins(pos, &sorted(neg), tie) / (pos.len() * neg.len()) as f64)
}

/// `ceil(p * n)` with `p * n` snapped to the nearest integer when within rounding noise.
pub fn top_negative_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (snapped as usize).clamp(1, n)
}

/// AUC against only the `ceil(p * N-)` highest-scoring negatives.
pub fn pauc(pos: &[f64], neg: &[f64], p: f64, tie: TieMode) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Input(format!("pAUC range {p} must lie in (0, 1]")));
    }
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("pAUC needs at least one positive and one negative".into()));
    }
    let k = top_negative_count(p, neg.len());
    let neg = sorted(neg);
    let top = &neg[neg.len() - k..];
    Ok(pair_wins(pos, top, tie) / (pos.len() * k) as f64)
}

/// `(false positive rate, true positive rate)` at every distinct threshold,
/// from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("ROC needs at least one positive and one negative".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(s, is_pos)) in all.iter().enumerate() {
        if is_pos {
            tp += 1;
        } else {
            fp += 1;
        }
        if all.get(i + 1).is_none_or(|next| next.0 != s) {
            points.push((fp as f64 / nn, tp as f64 / np));
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Items scoring at or above this value are predicted positive.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Starts at recall 0 with the precision of the highest threshold, then one point per distinct score, descending.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Precision-recall curve over every distinct score, area by trapezoids over recall.
/// Returns `None` when there is no positive.
pub fn pr_curve(scores: &[f64], truths: &[bool]) -> Result<Option<PrCurve>> {
    if scores.len() != truths.len() {
        return Err(Error::Input(format!("{} scores for {} truths", scores.len(), truths.len())));
    }
    check_finite(scores, "ranking")?;
    let positives = truths.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut taken) = (0usize, 0usize);
    for (i, &idx) in order.iter().enumerate() {
        taken += 1;
        tp += truths[idx] as usize;
        let s = scores[idx];
        if order.get(i + 1).is_none_or(|&next| scores[next] != s) {
            points.push(PrPoint {
                threshold: s,
                precision: tp as f64 / taken as f64,
                recall: tp as f64 / positives as f64,
            });
        }
    }
    let first = points[0];
    points.insert(
        0,
        PrPoint {
            threshold: f64::INFINITY,
            precision: first.precision,
            recall: 0.0,
        },
    );
    let auprc = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0)
        .sum();
    Ok(Some(PrCurve { points, auprc }))
}

fn column_truths(truths: &Matrix, c: usize) -> Vec<bool> {
    (0..truths.rows()).map(|r| truths.get(r, c) > 0.5).collect()
}

fn column(m: &Matrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m.get(r, c)).collect()
}

/// Per-class curves (`None` for classes without positives) and the mean area over the rest.
pub fn macro_auprc(scores: &Matrix, truths: &Matrix) -> Result<(f64, Vec<Option<PrCurve>>)> {
    if scores.shape() != truths.shape() {
        return Err(Error::Input("scores and truths differ in shape".into()));
    }
    let curves = (0..scores.cols())
        .map(|c| pr_curve(&column(scores, c), &column_truths(truths, c)))
        .collect::<Result<Vec<_>>>()?;
    for (c, curve) in curves.iter().enumerate() {
        if curve.is_none() {
            log::warn!("class {c} has no positive sample and is left out of macro AUPRC");
        }
    }
    let areas: Vec<f64> = curves.iter().flatten().map(|c| c.auprc).collect();
    if areas.is_empty() {
        return Err(Error::Input("no class has a positive sample".into()));
    }
    Ok((areas.iter().sum::<f64>() / areas.len() as f64, curves))
}

/// Area of the curve of all (instance, class) pairs pooled.
pub fn micro_auprc(scores: &Matrix, truths: &Matrix) -> Result<PrCurve> {
    if scores.shape() != truths.shape() {
        return Err(Error::Input("scores and truths differ in shape".into()));
    }
    let t: Vec<bool> = truths.data().iter().map(|&v| v > 0.5).collect();
    pr_curve(scores.data(), &t)?.ok_or_else(|| Error::Input("no positive sample".into()))
}
