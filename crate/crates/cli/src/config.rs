//! Run configuration: a JSON file, overridden by flags, echoed to the output
//! directory before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tier::metrics::ThresholdObjective;
use tier::synth_data::{Split, SplitCounts, SynthConfig};
use tier::trainer::TrainConfig;
use tier::{Error, Result};

/// File name of the echoed configuration in every output directory.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub classes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let counts = SplitCounts::default_sizes();
        Self {
            seed: 0,
            train: counts.train,
            val: counts.val,
            test: counts.test,
            classes: SynthConfig::default().num_classes,
        }
    }
}

impl DataSection {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.classes,
            ..SynthConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    pub epochs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid_min: 0.0,
            grid_max: 0.25,
            grid_step: 0.05,
            epochs: 1,
        }
    }
}

impl SweepSection {
    /// Grid values from `grid_min` to `grid_max` inclusive.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (lo, hi, step) = (self.grid_min, self.grid_max, self.grid_step);
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid grid range [{lo}, {hi}]")));
        }
        if hi == lo {
            return Ok(vec![lo]);
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!(
                "grid step must be positive, got {step}"
            )));
        }
        let intervals = (hi - lo) / step;
        let n = intervals.round();
        if (intervals - n).abs() > 1e-9 * intervals.max(1.0) || n > 1000.0 {
            return Err(Error::Config(format!(
                "grid step {step} does not divide [{lo}, {hi}] into at most 1000 intervals"
            )));
        }
        let n = n as usize;
        Ok((0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub scores: Vec<PathBuf>,
    /// Score tables used only to pick thresholds, one per entry of `scores`.
    pub val_scores: Vec<PathBuf>,
    pub names: Vec<String>,
    pub bootstrap: usize,
    pub seed: u64,
    pub objective: ThresholdObjective,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            scores: Vec::new(),
            val_scores: Vec::new(),
            names: Vec::new(),
            bootstrap: 1000,
            seed: 0,
            objective: ThresholdObjective::Mcc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    pub sample_id: Option<u32>,
    pub label: Option<String>,
    /// Output pixels per patch side.
    pub cell: usize,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            sample_id: None,
            label: None,
            cell: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub resume: Option<PathBuf>,
    pub split: Split,
    pub data: DataSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub eval: EvalSection,
    pub heatmap: HeatmapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: None,
            workers: None,
            dataset: None,
            queries: None,
            checkpoints: Vec::new(),
            resume: None,
            split: Split::Test,
            data: DataSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            eval: EvalSection::default(),
            heatmap: HeatmapSection::default(),
        }
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

impl RunConfig {
    /// Built-in defaults, or the file at `path` layered over them.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory (--out)".into()))
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset (--dataset)".into()))
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        match self.checkpoints.as_slice() {
            [one] => Ok(one),
            [] => Err(Error::Config("no checkpoint (--checkpoint)".into())),
            _ => Err(Error::Config(
                "this command takes a single checkpoint".into(),
            )),
        }
    }

    /// Creates the output directory, refusing a non-empty one unless
    /// `force`, and writes the resolved configuration into it.
    pub fn prepare_output(&self, force: bool) -> Result<PathBuf> {
        let out = self.out_dir()?.to_owned();
        if out.exists() {
            let mut entries = fs::read_dir(&out).map_err(|e| io_error(&out, e))?;
            if entries.next().is_some() && !force {
                return Err(Error::Config(format!(
                    "{} already exists and is not empty (use --force to overwrite)",
                    out.display()
                )));
            }
        }
        fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
        let text = serde_json::to_string_pretty(self)?;
        write_text(&out.join(RESOLVED_CONFIG), &text)?;
        Ok(out)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}
