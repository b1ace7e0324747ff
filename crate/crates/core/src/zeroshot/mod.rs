//! Zero-shot scoring against averaged positive and negative text queries,
//! at image and patch level.

mod heatmap;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{read_file, write_file};
use crate::encoders::{ModelParams, CLS_TOKEN};
use crate::error::{Error, Result};
use crate::metrics::{ScoreRow, ScoreTable};
use crate::numerics::{functional, Scalar};
use crate::synth_data::{ClassCatalog, SyntheticSample};

pub use heatmap::{render_ppm, Heatmap, HEATMAP_CSV_HEADER};

/// Token sequences of one label's queries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub positive: Vec<Vec<u16>>,
    pub negative: Vec<Vec<u16>>,
}

/// Label name to queries, serialized as a JSON object.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryRegistry(pub BTreeMap<String, QuerySpec>);

impl QueryRegistry {
    /// One query per class, `[CLS, token]`; a class's negatives are the
    /// queries of every other class.
    pub fn from_catalog(catalog: &ClassCatalog) -> Self {
        let single = |token: u16| vec![CLS_TOKEN, token];
        let map = catalog
            .classes
            .iter()
            .map(|c| {
                let negative = catalog
                    .classes
                    .iter()
                    .filter(|o| o.token != c.token)
                    .map(|o| single(o.token))
                    .collect();
                let spec = QuerySpec {
                    positive: vec![single(c.token)],
                    negative,
                };
                (c.name.clone(), spec)
            })
            .collect();
        Self(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("query registry: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Averaged and renormalized query embeddings of one label.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet<F> {
    pub label: String,
    pub spec: QuerySpec,
    pub positive: Vec<F>,
    pub negative: Vec<F>,
}

/// Mean of `embeddings`, renormalized to unit length.
pub fn average_queries<F: Scalar>(label: &str, embeddings: &[Vec<F>]) -> Result<Vec<F>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Contract(format!("`{label}` needs at least one query")))?;
    let mut acc = vec![F::zero(); first.len()];
    for e in embeddings {
        if e.len() != acc.len() {
            return Err(Error::shape("average_queries", "query widths differ"));
        }
        for (a, &v) in acc.iter_mut().zip(e) {
            *a += v;
        }
    }
    let k = F::from_usize_lossy(embeddings.len());
    acc.iter_mut().for_each(|v| *v /= k);
    let norm = functional::norm(&acc).as_f64();
    if norm < functional::NORM_EPSILON {
        return Err(Error::DegenerateQuery {
            label: label.to_owned(),
            norm,
        });
    }
    functional::l2_normalize(&acc)
}

impl<F: Scalar> QuerySet<F> {
    pub fn from_embeddings(label: &str, positive: &[Vec<F>], negative: &[Vec<F>]) -> Result<Self> {
        Ok(Self {
            label: label.to_owned(),
            spec: QuerySpec {
                positive: Vec::new(),
                negative: Vec::new(),
            },
            positive: average_queries(label, positive)?,
            negative: average_queries(label, negative)?,
        })
    }

    /// Encodes each query's `[CLS]` embedding with `params`, then averages.
    pub fn build(params: &ModelParams<F>, label: &str, spec: &QuerySpec) -> Result<Self> {
        let embed = |queries: &[Vec<u16>]| {
            queries
                .iter()
                .map(|q| Ok(params.embed_text(q)?.row(0).to_vec()))
                .collect::<Result<Vec<_>>>()
        };
        let mut set =
            Self::from_embeddings(label, &embed(&spec.positive)?, &embed(&spec.negative)?)?;
        set.spec = spec.clone();
        Ok(set)
    }

    /// Positive minus negative cosine similarity; within `[-2, 2]` for unit
    /// `embedding`.
    pub fn score(&self, embedding: &[F]) -> F {
        functional::dot(embedding, &self.positive) - functional::dot(embedding, &self.negative)
    }

    /// Softmax weight of the positive similarity against the negative one.
    pub fn probability(&self, embedding: &[F]) -> F {
        let sims = [
            functional::dot(embedding, &self.positive),
            functional::dot(embedding, &self.negative),
        ];
        functional::softmax(&sims)[0]
    }
}

pub fn build_query_sets<F: Scalar>(
    params: &ModelParams<F>,
    registry: &QueryRegistry,
) -> Result<Vec<QuerySet<F>>> {
    registry
        .0
        .iter()
        .map(|(label, spec)| QuerySet::build(params, label, spec))
        .collect()
}

/// Zero-shot score of a unit-norm image embedding.
pub fn zero_shot_score<F: Scalar>(image_e: &[F], queries: &QuerySet<F>) -> Result<F> {
    check_unit(image_e)?;
    Ok(queries.score(image_e))
}

pub fn zero_shot_probability<F: Scalar>(image_e: &[F], queries: &QuerySet<F>) -> Result<F> {
    check_unit(image_e)?;
    Ok(queries.probability(image_e))
}

fn check_unit<F: Scalar>(v: &[F]) -> Result<()> {
    let n = functional::norm(v).as_f64();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "image embedding has norm {n}, expected 1"
        )));
    }
    Ok(())
}

/// Scores every sample against every label, with ground truth taken from
/// the sample's class labels.
pub fn score_samples<F: Scalar>(
    params: &ModelParams<F>,
    catalog: &ClassCatalog,
    registry: &QueryRegistry,
    samples: &[SyntheticSample],
) -> Result<ScoreTable> {
    let sets = build_query_sets(params, registry)?;
    let class_index = sets
        .iter()
        .map(|q| {
            catalog
                .class_by_name(&q.label)
                .map(|(i, _)| i)
                .ok_or_else(|| {
                    Error::Config(format!("query label `{}` is not a dataset class", q.label))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sample = samples
        .par_iter()
        .map(|s| {
            let (_, image_e) = params.embed_image(&s.pixels)?;
            Ok(sets
                .iter()
                .zip(&class_index)
                .map(|(q, &c)| ScoreRow {
                    sample_id: s.id,
                    label: q.label.clone(),
                    score: q.score(&image_e).as_f64(),
                    truth: s.labels[c],
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        rows: per_sample.into_iter().flatten().collect(),
    })
}

/// Mean AUC over the registry's labels; labels with a single class present
/// in `samples` are skipped.
pub fn mean_zero_shot_auc<F: Scalar>(
    params: &ModelParams<F>,
    catalog: &ClassCatalog,
    registry: &QueryRegistry,
    samples: &[SyntheticSample],
) -> Result<f64> {
    let table = score_samples(params, catalog, registry, samples)?;
    let mut aucs = Vec::new();
    for label in table.labels() {
        let (scores, truth) = table.column(&label);
        match crate::metrics::auc(&scores, &truth) {
            Ok(a) => aucs.push(a),
            Err(Error::UndefinedAuc) => {}
            Err(e) => return Err(e),
        }
    }
    if aucs.is_empty() {
        return Err(Error::UndefinedAuc);
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ModelDims;
    use crate::synth_data::SynthConfig;

    fn unit(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn single_query_is_its_own_average() {
        let u: Vec<f64> = functional::l2_normalize(&[0.3, -0.4, 1.2]).unwrap();
        let once = average_queries("x", std::slice::from_ref(&u)).unwrap();
        for (a, b) in once.iter().zip(&u) {
            assert!((a - b).abs() < 1e-15);
        }
        let twice = average_queries("x", &[u.clone(), u.clone()]).unwrap();
        for (a, b) in twice.iter().zip(&u) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_pair_averages_to_diagonal() {
        let q = average_queries("x", &[unit(0, 3), unit(1, 3)]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q[0] - h).abs() < 1e-15 && (q[1] - h).abs() < 1e-15 && q[2] == 0.0);
    }

    #[test]
    fn antipodal_queries_are_degenerate() {
        let err = average_queries("x", &[unit(0, 2), vec![-1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateQuery { .. }));
    }

    #[test]
    fn score_extremes() {
        let q = QuerySet::from_embeddings("x", &[unit(0, 3)], &[unit(1, 3)]).unwrap();
        assert_eq!(zero_shot_score(&unit(0, 3), &q).unwrap(), 1.0);
        let q = QuerySet::from_embeddings("x", &[unit(0, 3)], &[vec![-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(zero_shot_score(&unit(0, 3), &q).unwrap(), 2.0);
        let q = QuerySet::from_embeddings("x", &[unit(2, 3)], &[unit(2, 3)]).unwrap();
        assert_eq!(zero_shot_score(&unit(0, 3), &q).unwrap(), 0.0);
        assert_eq!(zero_shot_probability(&unit(1, 3), &q).unwrap(), 0.5);
    }

    #[test]
    fn probability_of_opposite_similarities() {
        let q = QuerySet::from_embeddings("x", &[unit(0, 2)], &[vec![-1.0, 0.0]]).unwrap();
        let p = zero_shot_probability(&unit(0, 2), &q).unwrap();
        assert!((p - 0.8807970779778823).abs() < 1e-15);
    }

    #[test]
    fn non_unit_image_rejected() {
        let q = QuerySet::from_embeddings("x", &[unit(0, 2)], &[unit(1, 2)]).unwrap();
        assert!(zero_shot_score(&[2.0, 0.0], &q).is_err());
    }

    #[test]
    fn registry_json_round_trip() {
        let catalog = ClassCatalog::new(&SynthConfig::default()).unwrap();
        let reg = QueryRegistry::from_catalog(&catalog);
        assert_eq!(reg.0.len(), 12);
        let spec = reg.0.values().next().unwrap();
        assert_eq!((spec.positive.len(), spec.negative.len()), (1, 11));
        assert_eq!(
            QueryRegistry::from_json(&reg.to_json().unwrap()).unwrap(),
            reg
        );
    }

    #[test]
    fn build_is_order_and_duplicate_invariant() {
        let p = ModelParams::<f64>::init(3, ModelDims::default()).unwrap();
        let a = QuerySpec {
            positive: vec![vec![0, 2], vec![0, 3, 4]],
            negative: vec![vec![0, 5]],
        };
        let b = QuerySpec {
            positive: vec![vec![0, 3, 4], vec![0, 2], vec![0, 3, 4], vec![0, 2]],
            negative: vec![vec![0, 5], vec![0, 5]],
        };
        let qa = QuerySet::build(&p, "l", &a).unwrap();
        let qb = QuerySet::build(&p, "l", &b).unwrap();
        for (x, y) in qa.positive.iter().zip(&qb.positive) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((functional::norm(&qa.positive) - 1.0).abs() < 1e-9);
    }
}
