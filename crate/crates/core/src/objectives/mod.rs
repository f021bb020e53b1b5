//! Task losses and evaluation metrics.

mod classification;
mod losses;
mod ranking;
mod report;

pub use classification::{
    argmax_rows, class_stats_multiclass, class_stats_multilabel, confusion_matrix, macro_acc, micro_f1,
    ClassStats,
};
pub use losses::{anomaly_score, bce_loss, ce_loss, PROB_CLAMP};
pub use ranking::{
    macro_auprc, micro_auprc, pauc, pr_curve, roc_auc, roc_curve, top_negative_count, PrCurve, PrPoint,
    TieMode,
};
pub use report::{AscReport, AsdReport, ClipScore, EvalReport, SectionResult, UstReport};
