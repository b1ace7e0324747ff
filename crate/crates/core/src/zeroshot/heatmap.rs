use serde::{Deserialize, Serialize};

use super::QuerySet;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const HEATMAP_CSV_HEADER: &str = "row,col,score";

/// Patch-level zero-shot scores on the encoder's `grid x grid` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub label: String,
    pub sample_id: Option<u32>,
    pub grid: usize,
    /// Row-major, `grid * grid` entries.
    pub scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Cell {
    row: usize,
    col: usize,
    score: f64,
}

impl Heatmap {
    pub fn compute<F: Scalar>(
        params: &ModelParams<F>,
        pixels: &[f32],
        queries: &QuerySet<F>,
        sample_id: Option<u32>,
    ) -> Result<Self> {
        let (patch_e, _) = params.embed_image(pixels)?;
        let (p, _) = patch_e.dims2()?;
        let scores = (0..p)
            .map(|i| queries.score(patch_e.row(i)).as_f64())
            .collect();
        Ok(Self {
            label: queries.label.clone(),
            sample_id,
            grid: params.dims.grid,
            scores,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.grid + col]
    }

    /// Row-major index of the highest-scoring patch, first on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (i, &score) in self.scores.iter().enumerate() {
            w.serialize(Cell {
                row: i / self.grid,
                col: i % self.grid,
                score,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(label: &str, grid: usize, text: &str) -> Result<Self> {
        let mut scores = vec![f64::NAN; grid * grid];
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for cell in r.deserialize::<Cell>() {
            let cell = cell?;
            if cell.row >= grid || cell.col >= grid {
                return Err(Error::Config(format!(
                    "cell ({}, {}) outside a {grid}x{grid} grid",
                    cell.row, cell.col
                )));
            }
            scores[cell.row * grid + cell.col] = cell.score;
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("heatmap CSV does not cover the grid".into()));
        }
        Ok(Self {
            label: label.to_owned(),
            sample_id: None,
            grid,
            scores,
        })
    }
}

/// Diverging color for `v` in `[-1, 1]`: blue below zero, mid-gray at zero,
/// red above.
fn diverging(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let toward = |from: f64, to: f64, t: f64| (from + (to - from) * t).round() as u8;
    if v >= 0.0 {
        [
            toward(128.0, 255.0, v),
            toward(128.0, 0.0, v),
            toward(128.0, 0.0, v),
        ]
    } else {
        let t = -v;
        [
            toward(128.0, 0.0, t),
            toward(128.0, 0.0, t),
            toward(128.0, 255.0, t),
        ]
    }
}

/// Binary PPM (P6) of `heatmap`, each patch expanded to a `cell x cell`
/// block. Colors scale by the largest absolute score so the sign is
/// always visible; an all-zero map renders uniform mid-gray.
pub fn render_ppm(heatmap: &Heatmap, cell: usize) -> Vec<u8> {
    let side = heatmap.grid * cell;
    let peak = heatmap.scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let s = heatmap.get(y / cell, x / cell);
            let v = if peak > 0.0 { s / peak } else { 0.0 };
            out.extend_from_slice(&diverging(v));
        }
    }
    out
}
