use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc::{auc, bootstrap_auc, BootstrapResult};
use super::classification::{mcc_f1, predict, threshold_select, ThresholdObjective};
use super::stats::t_test;
use crate::error::{Error, Result};

/// Significance level for declaring a winner between two models.
pub const ALPHA: f64 = 0.05;

/// One row of a score table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: u32,
    pub label: String,
    pub score: f64,
    pub truth: bool,
}

/// Per-(sample, label) scores in long form: `sample_id,label,score,truth`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Labels in first-seen order.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for r in &self.rows {
            if !seen.contains(&r.label) {
                seen.push(r.label.clone());
            }
        }
        seen
    }

    pub fn column(&self, label: &str) -> (Vec<f64>, Vec<bool>) {
        self.rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| (r.score, r.truth))
            .unzip()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::container::write_file(path, self.to_csv()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = crate::container::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_csv(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    /// AUC on the full evaluation set.
    pub auc: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub mcc: f64,
    pub f1: f64,
    pub threshold: f64,
    #[serde(skip)]
    pub bootstrap: Option<BootstrapResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub replicates: usize,
    pub seed: u64,
    pub threshold_objective: ThresholdObjective,
    pub labels: Vec<LabelReport>,
    /// Mean over labels of the bootstrap mean AUC.
    pub mean_auc: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub replicates: usize,
    pub seed: u64,
    pub objective: ThresholdObjective,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            objective: ThresholdObjective::Mcc,
        }
    }
}

/// Evaluates every label in `test`. Thresholds are chosen on `val` when it
/// is given, otherwise on `test` itself.
pub fn evaluate(
    model: &str,
    test: &ScoreTable,
    val: Option<&ScoreTable>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let labels = test.labels();
    if labels.is_empty() {
        return Err(Error::Contract("score table is empty".into()));
    }
    let mut reports = Vec::with_capacity(labels.len());
    for label in labels {
        let (scores, truth) = test.column(&label);
        let (sel_scores, sel_truth) = match val {
            Some(v) => v.column(&label),
            None => (scores.clone(), truth.clone()),
        };
        let threshold = threshold_select(&sel_scores, &sel_truth, options.objective)?;
        let (mcc, f1) = mcc_f1(&predict(&scores, threshold), &truth)?;
        let boot = bootstrap_auc(&scores, &truth, options.replicates, options.seed)?;
        reports.push(LabelReport {
            auc: auc(&scores, &truth)?,
            auc_mean: boot.mean,
            auc_std: boot.std,
            label,
            mcc,
            f1,
            threshold,
            bootstrap: Some(boot),
        });
    }
    let mean_auc = reports.iter().map(|r| r.auc_mean).sum::<f64>() / reports.len() as f64;
    Ok(EvalReport {
        model: model.to_owned(),
        replicates: options.replicates,
        seed: options.seed,
        threshold_objective: options.objective,
        labels: reports,
        mean_auc,
    })
}

impl EvalReport {
    /// `label,auc_mean,auc_std,mcc,f1,threshold`, closing with an
    /// `average` row.
    pub fn auc_table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "auc_mean", "auc_std", "mcc", "f1", "threshold"])?;
        for r in &self.labels {
            w.serialize((&r.label, r.auc_mean, r.auc_std, r.mcc, r.f1, r.threshold))?;
        }
        let n = self.labels.len() as f64;
        let avg = |f: fn(&LabelReport) -> f64| self.labels.iter().map(f).sum::<f64>() / n;
        w.serialize((
            "average",
            self.mean_auc,
            avg(|r| r.auc_std),
            avg(|r| r.mcc),
            avg(|r| r.f1),
            "",
        ))?;
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelComparison {
    pub label: String,
    /// Mean bootstrap AUC of A minus that of B.
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    /// `Some(true)` when A wins, `Some(false)` when B wins, `None` when the
    /// difference is not significant at [`ALPHA`].
    pub a_wins: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub model_a: String,
    pub model_b: String,
    pub labels: Vec<LabelComparison>,
}

/// Per-label Welch tests between the bootstrap distributions of two reports.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<ComparisonResult> {
    let b_by_label: BTreeMap<&str, &LabelReport> =
        b.labels.iter().map(|r| (r.label.as_str(), r)).collect();
    let mut labels = Vec::new();
    for ra in &a.labels {
        let rb = b_by_label.get(ra.label.as_str()).ok_or_else(|| {
            Error::Contract(format!("label {} missing from {}", ra.label, b.model))
        })?;
        let (ba, bb) = match (&ra.bootstrap, &rb.bootstrap) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::Contract(
                    "comparison needs bootstrap replicates".into(),
                ))
            }
        };
        let w = t_test(&ba.replicates, &bb.replicates)?;
        labels.push(LabelComparison {
            label: ra.label.clone(),
            mean_diff: w.mean_diff,
            t: w.t,
            p: w.p,
            a_wins: (w.p < ALPHA && w.mean_diff != 0.0).then_some(w.mean_diff > 0.0),
        });
    }
    Ok(ComparisonResult {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        labels,
    })
}

impl ComparisonResult {
    /// `label,model_a,model_b,mean_diff,t,p,winner`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label",
            "model_a",
            "model_b",
            "mean_diff",
            "t",
            "p",
            "winner",
        ])?;
        for c in &self.labels {
            let winner = match c.a_wins {
                Some(true) => self.model_a.as_str(),
                Some(false) => self.model_b.as_str(),
                None => "",
            };
            w.serialize((
                &c.label,
                &self.model_a,
                &self.model_b,
                c.mean_diff,
                c.t,
                c.p,
                winner,
            ))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(shift: f64) -> ScoreTable {
        let mut rows = Vec::new();
        for i in 0..40u32 {
            for (label, offset) in [("a", 0.0), ("b", 0.3)] {
                let truth = i % 3 == 0;
                let noise = ((i * 7919 % 97) as f64) / 97.0;
                let score = noise + if truth { shift + offset } else { 0.0 };
                rows.push(ScoreRow {
                    sample_id: i,
                    label: label.into(),
                    score,
                    truth,
                });
            }
        }
        ScoreTable { rows }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = table(0.4);
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("sample_id,label,score,truth\n"));
        assert_eq!(ScoreTable::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn report_and_comparison() {
        let opts = EvalOptions {
            replicates: 200,
            seed: 9,
            objective: ThresholdObjective::F1,
        };
        let strong = evaluate("strong", &table(0.8), None, &opts).unwrap();
        let weak = evaluate("weak", &table(0.1), None, &opts).unwrap();
        assert_eq!(strong.labels.len(), 2);
        assert!(strong.mean_auc > weak.mean_auc);
        let cmp = compare(&strong, &weak).unwrap();
        assert!(cmp.labels.iter().all(|c| c.a_wins == Some(true)));
        let csv = cmp.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        let table_csv = strong.auc_table_csv().unwrap();
        assert!(table_csv.lines().last().unwrap().starts_with("average,"));
        let json = serde_json::to_string(&strong).unwrap();
        assert!(json.contains("\"auc_mean\""));
    }
}
