use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Maximum redraws of a bootstrap replicate that came out single-class.
pub const MAX_REDRAWS: usize = 100;

fn check_inputs<F: Scalar>(scores: &[F], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann-Whitney rank sum; tied scores
/// share their mean rank, so each positive-negative tie counts 1/2.
pub fn auc<F: Scalar>(scores: &[F], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));

    // Twice the rank sum of positives, kept integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged: (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u64;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let (pos, neg) = (pos as u64, neg as u64);
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); zero for a single replicate.
    pub std: f64,
    pub seed: u64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn replicate<F: Scalar>(scores: &[F], labels: &[bool], seed: u64, index: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = scores.len();
    let mut s = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for _ in 0..MAX_REDRAWS {
        s.clear();
        l.clear();
        for _ in 0..n {
            let k = rng.random_range(0..n);
            s.push(scores[k]);
            l.push(labels[k]);
        }
        match auc(&s, &l) {
            Err(Error::UndefinedAuc) => continue,
            other => return other,
        }
    }
    Err(Error::Domain(format!(
        "bootstrap replicate {index} drew a single class {MAX_REDRAWS} times"
    )))
}

/// AUC over `n_replicates` resamples with replacement. Replicate `r` uses
/// stream `r` of `seed`, so results do not depend on scheduling.
pub fn bootstrap_auc<F: Scalar>(
    scores: &[F],
    labels: &[bool],
    n_replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if n_replicates == 0 {
        return Err(Error::Contract(
            "need at least one bootstrap replicate".into(),
        ));
    }
    check_inputs(scores, labels)?;
    let replicates = (0..n_replicates as u64)
        .into_par_iter()
        .map(|r| replicate(scores, labels, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&replicates);
    Ok(BootstrapResult {
        replicates,
        mean,
        std,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores() {
        assert_eq!(auc(&[0.9, 0.2, 0.7], &[true, false, true]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(
            auc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
    }

    #[test]
    fn negated_scores_complement() {
        let s = [0.3, 0.1, 0.8, 0.8, 0.5, 0.2];
        let l = [true, false, true, false, false, true];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auc(&s, &l).unwrap();
        assert!((auc(&neg, &l).unwrap() - (1.0 - a)).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedAuc)
        ));
        assert!(matches!(
            bootstrap_auc(&[0.1, 0.2], &[false, false], 10, 0),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn bootstrap_degenerate_scores() {
        let labels = [true, false, true, false, true, false];
        let r = bootstrap_auc(&[1.0; 6], &labels, 50, 3).unwrap();
        assert!(r.replicates.iter().all(|&a| a == 0.5));
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2, 0.9];
        let labels = [false, false, true, true, true, false, true];
        let a = bootstrap_auc(&scores, &labels, 1, 42).unwrap();
        let b = bootstrap_auc(&scores, &labels, 1, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 1);
    }
}
