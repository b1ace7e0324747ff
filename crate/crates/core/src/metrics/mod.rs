//! Evaluation statistics: AUC with bootstrap, thresholded MCC/F1, Welch
//! t-tests and the similarity-distribution analyses.

mod analysis;
mod auc;
mod classification;
mod report;
mod stats;

pub use analysis::{
    curves_from_sorted, localization_counts, localization_hit_rate, mean_row_entropy,
    row_entropy_of, similarity_curves, sorted_cls_similarities, CurveStats, SimilarityCurve,
};
pub use auc::{auc, bootstrap_auc, BootstrapResult, MAX_REDRAWS};
pub use classification::{
    candidate_thresholds, mcc_f1, predict, threshold_select, Confusion, ThresholdObjective,
};
pub use report::{
    compare, evaluate, ComparisonResult, EvalOptions, EvalReport, LabelComparison, LabelReport,
    ScoreRow, ScoreTable, ALPHA,
};
pub use stats::{ln_gamma, regularized_incomplete_beta, student_t_two_sided, t_test, WelchTest};
