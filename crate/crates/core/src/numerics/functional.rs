//! Slice-level primitives shared by the tape and the evaluation code.

use super::Scalar;
use crate::error::{Error, Result};

/// Norm below which a vector cannot be normalized.
pub const NORM_EPSILON: f64 = 1e-12;

/// Tolerance on probability slices passed to [`entropy`]; widened for
/// scalars whose rounding of a sum of `n` terms exceeds it.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

fn probability_tolerance<F: Scalar>(n: usize) -> f64 {
    PROBABILITY_TOLERANCE.max(4.0 * (n.max(1) as f64) * F::epsilon().as_f64())
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<F: Scalar>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

/// Returns `v / ||v||`, refusing vectors shorter than [`NORM_EPSILON`].
pub fn l2_normalize<F: Scalar>(v: &[F]) -> Result<Vec<F>> {
    let n = norm(v);
    if n.as_f64().is_nan() || n.as_f64() < NORM_EPSILON {
        return Err(Error::DegenerateVector { norm: n.as_f64() });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Max-shifted softmax.
pub fn softmax<F: Scalar>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy<F: Scalar>(p: &[F]) -> Result<F> {
    let mut total = F::zero();
    let mut h = F::zero();
    for &v in p {
        if v < F::zero() {
            return Err(Error::Domain(format!("negative probability {v}")));
        }
        total += v;
        if v > F::zero() {
            h -= v * v.ln();
        }
    }
    if (total.as_f64() - 1.0).abs() > probability_tolerance::<F>(p.len()) {
        return Err(Error::Domain(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(h)
}

pub fn mean<F: Scalar>(v: &[F]) -> F {
    v.iter().copied().sum::<F>() / F::from_usize_lossy(v.len())
}
