use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::encoders::ModelDims;
use crate::error::{Error, Result};
use crate::synth_data::{ClassCatalog, SyntheticSample};
use crate::zeroshot::{mean_zero_shot_auc, QueryRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub seed: u64,
    /// Validation mean zero-shot AUC; NaN when the cell failed.
    pub auc: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub lambda_p: Vec<f64>,
    pub lambda_t: Vec<f64>,
    /// Row-major over `lambda_p` then `lambda_t`.
    pub cells: Vec<SweepCell>,
    /// Index of the highest finite AUC, first in grid order on ties.
    pub best: Option<usize>,
}

/// `n` evenly spaced values from 0 to `max` inclusive.
pub fn default_grid(n: usize, max: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Trains one short run per `(λp, λt)` pair from the same initialization
/// and scores each on `val`. A failing cell records its error and a NaN
/// AUC; the other cells still run.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base: &TrainConfig,
    lambda_p: &[f64],
    lambda_t: &[f64],
    dims: ModelDims,
    train_set: &[SyntheticSample],
    val_set: &[SyntheticSample],
    catalog: &ClassCatalog,
    registry: &QueryRegistry,
) -> Result<SweepResult> {
    if lambda_p.is_empty() || lambda_t.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let pairs: Vec<(f64, f64)> = lambda_p
        .iter()
        .flat_map(|&p| lambda_t.iter().map(move |&t| (p, t)))
        .collect();
    let cells: Vec<SweepCell> = pairs
        .par_iter()
        .map(|&(p, t)| {
            let cfg = TrainConfig {
                lambda_p: p,
                lambda_t: t,
                ..base.clone()
            };
            let outcome = train::<f64>(cfg, dims, train_set)
                .and_then(|(ckpt, _)| mean_zero_shot_auc(&ckpt.params, catalog, registry, val_set));
            let (auc, error) = match outcome {
                Ok(a) => (a, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            SweepCell {
                lambda_p: p,
                lambda_t: t,
                seed: base.seed,
                auc,
                error,
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.auc.is_finite() && best.is_none_or(|b| c.auc > cells[b].auc) {
            best = Some(i);
        }
    }
    Ok(SweepResult {
        lambda_p: lambda_p.to_vec(),
        lambda_t: lambda_t.to_vec(),
        cells,
        best,
    })
}

impl SweepResult {
    pub fn get(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.lambda_t.len() + j]
    }

    /// AUC matrix with `λp` down the rows and `λt` across, then a final
    /// `best,λp,λt,auc` line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_writer(Vec::new());
        let mut header = vec!["lambda_p\\lambda_t".to_owned()];
        header.extend(self.lambda_t.iter().map(f64::to_string));
        w.write_record(&header)?;
        for (i, p) in self.lambda_p.iter().enumerate() {
            let mut row = vec![p.to_string()];
            row.extend((0..self.lambda_t.len()).map(|j| self.get(i, j).auc.to_string()));
            w.write_record(&row)?;
        }
        match self.best {
            Some(b) => {
                let c = &self.cells[b];
                w.write_record([
                    "best".to_owned(),
                    c.lambda_p.to_string(),
                    c.lambda_t.to_string(),
                    c.auc.to_string(),
                ])?;
            }
            None => w.write_record(["best", "", "", ""])?,
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{Dataset, Split, SplitCounts, SynthConfig};

    #[test]
    fn grid_values() {
        assert_eq!(default_grid(6, 0.25), vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25]);
        assert_eq!(default_grid(1, 0.25), vec![0.0]);
    }

    #[test]
    fn single_cell_matches_a_plain_run() {
        let counts = SplitCounts {
            train: 64,
            val: 48,
            test: 0,
        };
        let d = Dataset::generate(6, counts, SynthConfig::default()).unwrap();
        let registry = QueryRegistry::from_catalog(d.catalog());
        let base = TrainConfig {
            epochs: 1,
            seed: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let dims = d.manifest.model_dims();
        let r = sweep(
            &base,
            &[0.1],
            &[0.05],
            dims,
            d.split(Split::Train),
            d.split(Split::Val),
            d.catalog(),
            &registry,
        )
        .unwrap();
        let cfg = TrainConfig {
            lambda_p: 0.1,
            lambda_t: 0.05,
            ..base
        };
        let (ckpt, _) = train::<f64>(cfg, dims, d.split(Split::Train)).unwrap();
        let plain =
            mean_zero_shot_auc(&ckpt.params, d.catalog(), &registry, d.split(Split::Val)).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].auc, plain);
        assert_eq!(r.best, Some(0));
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn failing_cell_is_recorded() {
        let counts = SplitCounts {
            train: 1,
            val: 8,
            test: 0,
        };
        let d = Dataset::generate(6, counts, SynthConfig::default()).unwrap();
        let registry = QueryRegistry::from_catalog(d.catalog());
        let r = sweep(
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            &[0.0, 0.1],
            &[0.0],
            d.manifest.model_dims(),
            d.split(Split::Train),
            d.split(Split::Val),
            d.catalog(),
            &registry,
        )
        .unwrap();
        assert!(r.cells.iter().all(|c| c.auc.is_nan() && c.error.is_some()));
        assert_eq!(r.best, None);
        assert!(r.to_csv().unwrap().contains("NaN"));
    }
}
