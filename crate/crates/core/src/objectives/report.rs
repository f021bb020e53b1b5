use std::fmt::Write as _;

use crate::data::Domain;
use crate::matrix::Matrix;
use crate::task::Task;
use crate::{Error, Result};

use super::classification::{class_stats_multiclass, confusion_matrix, macro_acc, micro_f1, ClassStats};
use super::ranking::{macro_auprc, micro_auprc, pauc, roc_auc, roc_curve, PrCurve, TieMode};

#[derive(Debug, Clone, PartialEq)]
pub struct AscReport {
    pub macro_acc: f64,
    /// `None` for classes absent from the evaluated set.
    pub class_acc: Vec<Option<f64>>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
}

impl AscReport {
    pub fn new(predictions: Vec<usize>, truths: Vec<usize>, n_classes: usize) -> Result<Self> {
        let stats = class_stats_multiclass(&predictions, &truths, n_classes)?;
        Ok(AscReport {
            macro_acc: macro_acc(&predictions, &truths, n_classes)?,
            class_acc: stats.iter().map(ClassStats::accuracy).collect(),
            confusion: confusion_matrix(&predictions, &truths, n_classes)?,
            predictions,
            truths,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UstReport {
    pub macro_auprc: f64,
    pub micro_auprc: f64,
    pub micro_f1: f64,
    pub class_curves: Vec<Option<PrCurve>>,
    pub micro_curve: PrCurve,
    /// Per-class probabilities and binary truths the metrics were computed from.
    pub scores: Matrix,
    pub truths: Matrix,
}

impl UstReport {
    pub fn new(scores: Matrix, truths: Matrix, threshold: f64) -> Result<Self> {
        let (macro_auprc, class_curves) = macro_auprc(&scores, &truths)?;
        let micro_curve = micro_auprc(&scores, &truths)?;
        Ok(UstReport {
            macro_auprc,
            micro_auprc: micro_curve.auprc,
            micro_f1: micro_f1(&scores, &truths, threshold)?,
            class_curves,
            micro_curve,
            scores,
            truths,
        })
    }

    pub fn class_auprc(&self) -> Vec<Option<f64>> {
        self.class_curves.iter().map(|c| c.as_ref().map(|c| c.auprc)).collect()
    }
}

/// Anomaly score of one evaluated clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipScore {
    pub section: usize,
    pub domain: Domain,
    pub anomalous: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionResult {
    pub section: usize,
    pub domain: Domain,
    pub auc: f64,
    pub pauc: f64,
    /// Anomalous clips rank as positives.
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
    pub roc: Vec<(f64, f64)>,
    /// Every score identical, so the strict AUC collapses to 0.
    pub all_tied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsdReport {
    pub sections: Vec<SectionResult>,
    pub mean_auc: f64,
    pub mean_pauc: f64,
    pub max_fpr: f64,
    pub tie: TieMode,
}

impl AsdReport {
    /// One result per (section, domain) group holding both normal and anomalous clips.
    pub fn new(clips: &[ClipScore], max_fpr: f64, tie: TieMode) -> Result<Self> {
        let mut keys: Vec<(usize, Domain)> = clips.iter().map(|c| (c.section, c.domain)).collect();
        keys.sort();
        keys.dedup();
        let mut sections = Vec::new();
        for (section, domain) in keys {
            let group = clips.iter().filter(|c| c.section == section && c.domain == domain);
            let (pos, neg): (Vec<&ClipScore>, Vec<&ClipScore>) = group.partition(|c| c.anomalous);
            let pos: Vec<f64> = pos.iter().map(|c| c.score).collect();
            let neg: Vec<f64> = neg.iter().map(|c| c.score).collect();
            if pos.is_empty() || neg.is_empty() {
                log::warn!("section {section} {domain} lacks normal or anomalous clips; skipped");
                continue;
            }
            let first = pos[0];
            let all_tied = pos.iter().chain(&neg).all(|&s| s == first);
            if all_tied {
                log::warn!("section {section} {domain}: all anomaly scores are equal");
            }
            sections.push(SectionResult {
                section,
                domain,
                auc: roc_auc(&pos, &neg, tie)?,
                pauc: pauc(&pos, &neg, max_fpr, tie)?,
                roc: roc_curve(&pos, &neg)?,
                positive_scores: pos,
                negative_scores: neg,
                all_tied,
            });
        }
        if sections.is_empty() {
            return Err(Error::Input("no section has both normal and anomalous clips".into()));
        }
        let n = sections.len() as f64;
        Ok(AsdReport {
            mean_auc: sections.iter().map(|s| s.auc).sum::<f64>() / n,
            mean_pauc: sections.iter().map(|s| s.pauc).sum::<f64>() / n,
            sections,
            max_fpr,
            tie,
        })
    }

    pub fn section(&self, section: usize, domain: Domain) -> Option<&SectionResult> {
        self.sections.iter().find(|s| s.section == section && s.domain == domain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Asc(AscReport),
    Ust(UstReport),
    Asd(AsdReport),
}

impl EvalReport {
    pub fn task(&self) -> Task {
        match self {
            EvalReport::Asc(_) => Task::Asc,
            EvalReport::Ust(_) => Task::Ust,
            EvalReport::Asd(_) => Task::Asd,
        }
    }

    /// The headline number: macro accuracy, macro AUPRC or mean AUC.
    pub fn primary(&self) -> f64 {
        match self {
            EvalReport::Asc(r) => r.macro_acc,
            EvalReport::Ust(r) => r.macro_auprc,
            EvalReport::Asd(r) => r.mean_auc,
        }
    }

    /// Named scalar metrics in a stable order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        match self {
            EvalReport::Asc(r) => {
                let mut m = vec![("macro_acc".to_string(), r.macro_acc)];
                for (c, a) in r.class_acc.iter().enumerate() {
                    if let Some(a) = a {
                        m.push((format!("acc_class{c}"), *a));
                    }
                }
                m
            }
            EvalReport::Ust(r) => {
                let mut m = vec![
                    ("macro_auprc".to_string(), r.macro_auprc),
                    ("micro_auprc".to_string(), r.micro_auprc),
                    ("micro_f1".to_string(), r.micro_f1),
                ];
                for (c, a) in r.class_auprc().iter().enumerate() {
                    if let Some(a) = a {
                        m.push((format!("auprc_class{c}"), *a));
                    }
                }
                m
            }
            EvalReport::Asd(r) => {
                let mut m = Vec::new();
                for s in &r.sections {
                    m.push((format!("auc_section{}_{}", s.section, s.domain), s.auc));
                    m.push((format!("pauc_section{}_{}", s.section, s.domain), s.pauc));
                }
                m.push(("mean_auc".to_string(), r.mean_auc));
                m.push(("mean_pauc".to_string(), r.mean_pauc));
                m
            }
        }
    }

    /// `metric,value` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.metrics() {
            writeln!(s, "{k},{v}").expect("writing to a String");
        }
        s
    }

    /// Aligned `name: value` lines for terminals.
    pub fn to_text(&self) -> String {
        let mut s = format!("task: {}\n", self.task());
        let metrics = self.metrics();
        let width = metrics.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in metrics {
            writeln!(s, "{k:<width$}  {v:.4}").expect("writing to a String");
        }
        s
    }
}
