use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn tally(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// Zero when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, fn_, tn) = (
            self.tp as f64,
            self.fp as f64,
            self.fn_ as f64,
            self.tn as f64,
        );
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / denom
        }
    }

    /// Zero when there are no positives, predicted or true.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn mcc_f1(predicted: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    let c = Confusion::tally(predicted, truth)?;
    Ok((c.mcc(), c.f1()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdObjective {
    Mcc,
    F1,
}

impl ThresholdObjective {
    fn score(self, c: &Confusion) -> f64 {
        match self {
            ThresholdObjective::Mcc => c.mcc(),
            ThresholdObjective::F1 => c.f1(),
        }
    }
}

/// Predictions `score >= threshold`.
pub fn predict<F: Scalar>(scores: &[F], threshold: f64) -> Vec<bool> {
    scores.iter().map(|s| s.as_f64() >= threshold).collect()
}

/// Candidate thresholds: the smallest score (everything positive), then the
/// midpoints between consecutive distinct scores, ascending.
pub fn candidate_thresholds<F: Scalar>(scores: &[F]) -> Vec<f64> {
    let mut unique: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    unique.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    unique.dedup();
    let mut out = Vec::with_capacity(unique.len());
    if let Some(&lowest) = unique.first() {
        out.push(lowest);
    }
    out.extend(unique.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out
}

/// Threshold maximizing `objective`; ties go to the lowest threshold.
pub fn threshold_select<F: Scalar>(
    scores: &[F],
    labels: &[bool],
    objective: ThresholdObjective,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::UndefinedAuc);
    }
    // Sweep candidates in ascending order, moving examples from the
    // positive side to the negative side as the threshold passes them.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let mut c = Confusion {
        tp: positives,
        fp: scores.len() as u64 - positives,
        fn_: 0,
        tn: 0,
    };
    let mut next = 0;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for thr in candidate_thresholds(scores) {
        while next < order.len() && scores[order[next]].as_f64() < thr {
            if labels[order[next]] {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            next += 1;
        }
        let value = objective.score(&c);
        if value > best.0 {
            best = (value, thr);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let truth = [true, false, true, false];
        assert_eq!(mcc_f1(&truth, &truth).unwrap(), (1.0, 1.0));
        let inv: Vec<bool> = truth.iter().map(|t| !t).collect();
        assert_eq!(mcc_f1(&inv, &truth).unwrap().0, -1.0);
    }

    #[test]
    fn hand_evaluated_confusion() {
        // TP=2 FP=1 FN=1 TN=2.
        let pred = [true, true, true, false, false, false];
        let truth = [true, true, false, true, false, false];
        let (mcc, f1) = mcc_f1(&pred, &truth).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((mcc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_mcc() {
        assert_eq!(mcc_f1(&[true, true], &[true, false]).unwrap().0, 0.0);
    }

    #[test]
    fn label_swap_keeps_mcc() {
        let pred = [true, false, true, true, false, false, true];
        let truth = [true, true, false, true, false, true, false];
        let np: Vec<bool> = pred.iter().map(|b| !b).collect();
        let nt: Vec<bool> = truth.iter().map(|b| !b).collect();
        let a = mcc_f1(&pred, &truth).unwrap().0;
        let b = mcc_f1(&np, &nt).unwrap().0;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn separable_threshold_is_the_gap_midpoint() {
        let scores = [0.1, 0.3, 0.2, 0.7, 0.9];
        let labels = [false, false, false, true, true];
        for obj in [ThresholdObjective::Mcc, ThresholdObjective::F1] {
            let thr = threshold_select(&scores, &labels, obj).unwrap();
            assert!((thr - 0.5).abs() < 1e-15);
            let (mcc, f1) = mcc_f1(&predict(&scores, thr), &labels).unwrap();
            assert_eq!((mcc, f1), (1.0, 1.0));
        }
    }

    #[test]
    fn equal_scores_predict_everything_positive() {
        let scores = [0.4; 5];
        let labels = [true, false, false, true, false];
        let thr = threshold_select(&scores, &labels, ThresholdObjective::F1).unwrap();
        assert!(predict(&scores, thr).iter().all(|&p| p));
    }

    #[test]
    fn single_class_rejected() {
        assert!(threshold_select(&[0.1, 0.2], &[true, true], ThresholdObjective::Mcc).is_err());
    }
}
