use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::mean_std;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::losses::SimilarityMatrix;
use crate::numerics::{functional, Scalar, Tensor};
use crate::synth_data::SyntheticSample;

/// Mean and standard deviation per rank of descending-sorted similarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    /// Population standard deviation across images.
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurve {
    pub images: usize,
    pub raw: CurveStats,
    /// Each image's sorted similarities divided by their sum before
    /// aggregation.
    pub normalized: CurveStats,
}

impl SimilarityCurve {
    /// `rank,mean,std` rows for one variant, ranks starting at 1.
    pub fn to_csv(stats: &CurveStats) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "mean", "std"])?;
        for (i, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
            w.serialize((i + 1, m, s))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Descending sort of one image's patch-to-`[CLS]` cosine similarities.
pub fn sorted_cls_similarities<F: Scalar>(patch_e: &Tensor<F>, cls: &[F]) -> Result<Vec<f64>> {
    let (p, d) = patch_e.dims2()?;
    if cls.len() != d {
        return Err(Error::shape(
            "sorted_cls_similarities",
            format!("[CLS] of width {} against patches of width {d}", cls.len()),
        ));
    }
    let mut sims: Vec<f64> = (0..p)
        .map(|i| functional::dot(patch_e.row(i), cls).as_f64())
        .collect();
    sims.sort_by(|a, b| b.partial_cmp(a).expect("finite similarities"));
    Ok(sims)
}

fn normalize_by_sum(sorted: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = sorted.iter().sum();
    if total.abs() < functional::NORM_EPSILON {
        return Err(Error::Domain(format!(
            "similarities sum to {total:e}; cannot normalize"
        )));
    }
    Ok(sorted.iter().map(|v| v / total).collect())
}

fn aggregate(curves: &[Vec<f64>]) -> CurveStats {
    let ranks = curves[0].len();
    let n = curves.len() as f64;
    let mut mean = vec![0.0; ranks];
    let mut std = vec![0.0; ranks];
    for r in 0..ranks {
        let m = curves.iter().map(|c| c[r]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[r] - m).powi(2)).sum::<f64>() / n;
        mean[r] = m;
        std[r] = var.sqrt();
    }
    CurveStats { mean, std }
}

/// Aggregates per-image sorted similarity curves.
pub fn curves_from_sorted(per_image: &[Vec<f64>]) -> Result<SimilarityCurve> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::Contract("similarity curves need at least one image".into()))?;
    if per_image.iter().any(|c| c.len() != first.len()) {
        return Err(Error::Contract("images disagree on patch count".into()));
    }
    let normalized = per_image
        .iter()
        .map(|c| normalize_by_sum(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityCurve {
        images: per_image.len(),
        raw: aggregate(per_image),
        normalized: aggregate(&normalized),
    })
}

/// Patch-to-`[CLS]` similarity curves of `params` over `samples`, each
/// image paired with its own caption.
pub fn similarity_curves<F: Scalar>(
    params: &ModelParams<F>,
    samples: &[SyntheticSample],
) -> Result<SimilarityCurve> {
    let per_image = samples
        .par_iter()
        .map(|s| {
            let v = params.embed_pair(&s.pixels, &s.tokens)?;
            sorted_cls_similarities(&v.patch_e, &v.text_e)
        })
        .collect::<Result<Vec<_>>>()?;
    curves_from_sorted(&per_image)
}

/// Mean over token rows of the entropy of the row-wise softmax of `S`.
pub fn row_entropy_of<F: Scalar>(s: &Tensor<F>) -> Result<f64> {
    let (t, p) = s.dims2()?;
    if t == 0 || p == 0 {
        return Err(Error::Contract("empty similarity matrix".into()));
    }
    let mut total = 0.0;
    for i in 0..t {
        total += functional::entropy(&functional::softmax(s.row(i)))?.as_f64();
    }
    Ok(total / t as f64)
}

/// Sample mean of [`row_entropy_of`] over each sample's own caption and
/// image.
pub fn mean_row_entropy<F: Scalar>(
    params: &ModelParams<F>,
    samples: &[SyntheticSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract(
            "mean_row_entropy needs a non-empty set".into(),
        ));
    }
    let per = samples
        .par_iter()
        .map(|s| {
            let v = params.embed_pair(&s.pixels, &s.tokens)?;
            row_entropy_of(SimilarityMatrix::new(&v.token_e, &v.patch_e)?.as_tensor())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&per).0)
}

/// Hits and trials of the top-`k` test on one similarity matrix: every row
/// with at least one aligned patch is a trial, and it hits when one of
/// those patches ranks among the row's `k` largest similarities (ties
/// broken toward lower patch index).
pub fn localization_counts<F: Scalar>(
    s: &Tensor<F>,
    aligned: impl Fn(usize, usize) -> bool,
    k: usize,
) -> Result<(usize, usize)> {
    let (t, p) = s.dims2()?;
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let (mut hits, mut trials) = (0, 0);
    let mut order: Vec<usize> = Vec::with_capacity(p);
    for row in 0..t {
        if !(0..p).any(|c| aligned(row, c)) {
            continue;
        }
        trials += 1;
        let vals = s.row(row);
        order.clear();
        order.extend(0..p);
        order.sort_by(|&a, &b| {
            vals[b]
                .partial_cmp(&vals[a])
                .expect("finite")
                .then(a.cmp(&b))
        });
        if order.iter().take(k).any(|&c| aligned(row, c)) {
            hits += 1;
        }
    }
    Ok((hits, trials))
}

/// Fraction of object-token occurrences whose ground-truth patch is among
/// the token's top-`k` most similar patches.
pub fn localization_hit_rate<F: Scalar>(
    params: &ModelParams<F>,
    samples: &[SyntheticSample],
    k: usize,
) -> Result<f64> {
    let counts = samples
        .par_iter()
        .map(|smp| {
            let v = params.embed_pair(&smp.pixels, &smp.tokens)?;
            let s = SimilarityMatrix::new(&v.token_e, &v.patch_e)?;
            if s.as_tensor().shape()[0] != smp.alignment.rows() {
                return Err(Error::Contract(format!(
                    "sample {} has {} mask rows for {} tokens",
                    smp.id,
                    smp.alignment.rows(),
                    s.as_tensor().shape()[0]
                )));
            }
            localization_counts(s.as_tensor(), |r, c| smp.alignment.get(r, c), k)
        })
        .collect::<Result<Vec<_>>>()?;
    let (hits, trials) = counts
        .iter()
        .fold((0, 0), |(h, t), &(dh, dt)| (h + dh, t + dt));
    if trials == 0 {
        return Err(Error::Contract(
            "no aligned object tokens in the set".into(),
        ));
    }
    Ok(hits as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ModelDims;
    use crate::synth_data::{Dataset, Split, SplitCounts, SynthConfig};

    fn data(n: usize) -> Dataset {
        let counts = SplitCounts {
            train: 0,
            val: n,
            test: 0,
        };
        Dataset::generate(5, counts, SynthConfig::default()).unwrap()
    }

    #[test]
    fn single_image_has_zero_std() {
        let d = data(1);
        let p = ModelParams::<f64>::init(1, ModelDims::default()).unwrap();
        let c = similarity_curves(&p, d.split(Split::Val)).unwrap();
        assert!(c.raw.std.iter().all(|&s| s == 0.0));
        assert!(c.normalized.std.iter().all(|&s| s == 0.0));
        assert_eq!(c.raw.mean.len(), 49);
    }

    #[test]
    fn curves_are_sorted_and_normalized() {
        let d = data(8);
        let p = ModelParams::<f64>::init(2, ModelDims::default()).unwrap();
        let c = similarity_curves(&p, d.split(Split::Val)).unwrap();
        assert!(c.raw.mean.windows(2).all(|w| w[0] >= w[1]));
        assert!((c.normalized.mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_image_normalized_sums_to_one() {
        let sorted = vec![0.9, 0.5, 0.1, -0.2];
        let n = normalize_by_sum(&sorted).unwrap();
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(normalize_by_sum(&[0.5, -0.5]).is_err());
    }

    #[test]
    fn entropy_at_init_is_near_uniform() {
        let d = data(16);
        let p = ModelParams::<f64>::init(3, ModelDims::default()).unwrap();
        let h = mean_row_entropy(&p, d.split(Split::Val)).unwrap();
        let max = 49f64.ln();
        assert!(h <= max && h > 0.95 * max, "{h}");
        assert_eq!(h, mean_row_entropy(&p, d.split(Split::Val)).unwrap());
    }

    #[test]
    fn oracle_similarities_always_hit() {
        // Token i aligned with patch 3i; S is one-hot on the aligned patch.
        let (t, p) = (4, 49);
        let mut s = Tensor::<f64>::zeros([t, p]);
        for i in 0..t {
            s.data_mut()[i * p + 3 * i] = 1.0;
        }
        for k in [1, 3, 49] {
            let (h, n) = localization_counts(&s, |r, c| c == 3 * r, k).unwrap();
            assert_eq!((h, n), (4, 4));
        }
    }

    #[test]
    fn k_equal_to_patch_count_always_hits() {
        let d = data(6);
        let p = ModelParams::<f64>::init(4, ModelDims::default()).unwrap();
        assert_eq!(
            localization_hit_rate(&p, d.split(Split::Val), 49).unwrap(),
            1.0
        );
    }
}
