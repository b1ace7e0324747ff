//! Synthetic paired images and captions with known token-patch alignment.
//!
//! Each image is a `K x K` grid of `s x s` grayscale patches filled with
//! Gaussian background noise. Between one and four objects are stamped into
//! distinct patches, each object being a fixed binary tile for its class.
//! The caption lists the object tokens plus a few filler tokens in random
//! order after `[CLS]`, so every object token aligns with exactly one patch.

mod format;

pub use format::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION,
};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{ModelDims, CLS_TOKEN, PAD_TOKEN};
use crate::error::{Error, Result};

const CLASS_NAMES: [&str; 12] = [
    "blob", "ring", "cross", "bar", "dot", "grid", "wave", "arc", "box", "star", "zig", "hook",
];

/// Seed of the fixed tile patterns; independent of the dataset seed so all
/// datasets share one visual vocabulary.
const TILE_SEED: u64 = 0x7157_0b1e_c7a5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid: usize,
    pub patch_size: usize,
    pub num_classes: usize,
    pub num_fillers: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    pub max_objects: usize,
    pub max_fillers: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: 7,
            patch_size: 8,
            num_classes: 12,
            num_fillers: 20,
            noise: 0.1,
            max_objects: 4,
            max_fillers: 3,
            max_len: 16,
        }
    }
}

impl SynthConfig {
    pub fn num_patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn image_side(&self) -> usize {
        self.grid * self.patch_size
    }

    /// Tokens used: `[CLS]`, `[PAD]`, one per class, the fillers.
    pub fn vocab_size(&self) -> usize {
        2 + self.num_classes + self.num_fillers
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.patch_size == 0 {
            return Err(Error::Config("empty image grid".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("class catalog is empty".into()));
        }
        if self.max_objects == 0 || self.max_objects > self.num_patches() {
            return Err(Error::Config(format!(
                "max_objects {} must be in 1..={}",
                self.max_objects,
                self.num_patches()
            )));
        }
        if self.max_fillers > 0 && self.num_fillers == 0 {
            return Err(Error::Config("fillers requested but none defined".into()));
        }
        if 1 + self.max_objects + self.max_fillers > self.max_len {
            return Err(Error::Config(format!(
                "captions of up to {} tokens exceed max_len {}",
                1 + self.max_objects + self.max_fillers,
                self.max_len
            )));
        }
        if self.vocab_size() > usize::from(u16::MAX) {
            return Err(Error::Config("vocabulary exceeds u16 token ids".into()));
        }
        Ok(())
    }

    /// Model dimensions matching this data, other widths at their defaults.
    pub fn model_dims(&self) -> ModelDims {
        let base = ModelDims::default();
        ModelDims {
            grid: self.grid,
            patch_size: self.patch_size,
            channels: 1,
            vocab: base.vocab.max(self.vocab_size()),
            max_len: self.max_len,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub name: String,
    pub token: u16,
    /// `s*s` on/off pixels, row-major, as a string of `0`/`1`.
    pub tile: String,
}

impl ObjectClass {
    pub fn tile_bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.tile.bytes().map(|b| b == b'1')
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub classes: Vec<ObjectClass>,
    pub filler_tokens: Vec<u16>,
}

impl ClassCatalog {
    /// Object tokens follow `[CLS]`/`[PAD]`; fillers follow the objects.
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let area = config.patch_size * config.patch_size;
        let mut rng = ChaCha8Rng::seed_from_u64(TILE_SEED);
        let mut tiles: Vec<String> = Vec::with_capacity(config.num_classes);
        while tiles.len() < config.num_classes {
            let tile: String = (0..area)
                .map(|_| if rng.random::<bool>() { '1' } else { '0' })
                .collect();
            // Reject empty tiles and repeats; neither is distinguishable.
            if tile.contains('1') && !tiles.contains(&tile) {
                tiles.push(tile);
            }
        }
        let classes = tiles
            .into_iter()
            .enumerate()
            .map(|(k, tile)| ObjectClass {
                name: CLASS_NAMES
                    .get(k)
                    .map_or_else(|| format!("class{k}"), |n| (*n).to_string()),
                token: (2 + k) as u16,
                tile,
            })
            .collect();
        let first_filler = 2 + config.num_classes;
        let filler_tokens = (0..config.num_fillers)
            .map(|k| (first_filler + k) as u16)
            .collect();
        Ok(Self {
            classes,
            filler_tokens,
        })
    }

    pub fn class_by_name(&self, name: &str) -> Option<(usize, &ObjectClass)> {
        self.classes
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    pub fn class_of_token(&self, token: u16) -> Option<usize> {
        self.classes.iter().position(|c| c.token == token)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}` (train, val, test)")))
    }
}

/// Binary `rows x cols` matrix; row `i` is caption position `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl AlignmentMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape("alignment", "bit count does not match shape"));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.cols + col] = true;
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.bits[row * self.cols..(row + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Columns set in `row`.
    pub fn targets(&self, row: usize) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.get(row, c)).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: u32,
    pub split: Split,
    /// `(K s) x (K s)` grayscale, row-major.
    pub pixels: Vec<f32>,
    /// `[CLS]`, caption tokens, then `[PAD]` up to `max_len`.
    pub tokens: Vec<u16>,
    /// `T x P` where `T` counts the non-pad tokens.
    pub alignment: AlignmentMask,
    /// Multi-hot over catalog classes.
    pub labels: Vec<bool>,
}

impl SyntheticSample {
    pub fn caption_len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != PAD_TOKEN).count()
    }

    pub fn pair(&self) -> (&[f32], &[u16]) {
        (&self.pixels, &self.tokens)
    }
}

/// Draws one sample from `rng`.
pub fn generate_sample<R: Rng>(
    rng: &mut R,
    catalog: &ClassCatalog,
    config: &SynthConfig,
    id: u32,
    split: Split,
) -> Result<SyntheticSample> {
    config.validate()?;
    if catalog.classes.len() < config.max_objects {
        return Err(Error::Config(format!(
            "catalog of {} classes cannot supply {} distinct objects",
            catalog.classes.len(),
            config.max_objects
        )));
    }
    let (k, s) = (config.grid, config.patch_size);
    let side = config.image_side();
    let noise =
        Normal::new(0.0, config.noise).map_err(|e| Error::Config(format!("noise level: {e}")))?;

    let m = rng.random_range(1..=config.max_objects);
    let classes = index::sample(rng, catalog.classes.len(), m).into_vec();
    let patches = index::sample(rng, k * k, m).into_vec();

    let mut pixels: Vec<f32> = (0..side * side).map(|_| noise.sample(rng) as f32).collect();
    for (&cls, &patch) in classes.iter().zip(&patches) {
        let (gr, gc) = (patch / k, patch % k);
        for (i, on) in catalog.classes[cls].tile_bits().enumerate() {
            if on {
                let (y, x) = (gr * s + i / s, gc * s + i % s);
                pixels[y * side + x] += 1.0;
            }
        }
    }

    let fillers = if config.max_fillers == 0 {
        0
    } else {
        rng.random_range(0..=config.max_fillers)
    };
    // (token, aligned patch) in caption order after [CLS].
    let mut caption: Vec<(u16, Option<usize>)> = classes
        .iter()
        .zip(&patches)
        .map(|(&c, &p)| (catalog.classes[c].token, Some(p)))
        .collect();
    for _ in 0..fillers {
        let f = catalog.filler_tokens[rng.random_range(0..catalog.filler_tokens.len())];
        caption.push((f, None));
    }
    caption.shuffle(rng);

    let t = caption.len() + 1;
    let mut tokens = Vec::with_capacity(config.max_len);
    tokens.push(CLS_TOKEN);
    let mut alignment = AlignmentMask::new(t, k * k);
    for (pos, &(tok, patch)) in caption.iter().enumerate() {
        tokens.push(tok);
        if let Some(p) = patch {
            alignment.set(pos + 1, p);
        }
    }
    tokens.resize(config.max_len, PAD_TOKEN);

    let mut labels = vec![false; catalog.classes.len()];
    for &c in &classes {
        labels[c] = true;
    }
    Ok(SyntheticSample {
        id,
        split,
        pixels,
        tokens,
        alignment,
        labels,
    })
}

/// Per-sample generator: stream `index` of the dataset seed.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn default_sizes() -> Self {
        Self {
            train: 4096,
            val: 512,
            test: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub counts: SplitCounts,
    pub config: SynthConfig,
    pub catalog: ClassCatalog,
}

impl DatasetManifest {
    pub fn model_dims(&self) -> ModelDims {
        self.config.model_dims()
    }
}

/// A generated dataset; samples are stored train, then val, then test, with
/// ids equal to their position.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SyntheticSample>,
}

impl Dataset {
    pub fn generate(seed: u64, counts: SplitCounts, config: SynthConfig) -> Result<Self> {
        let catalog = ClassCatalog::new(&config)?;
        if u32::try_from(counts.total()).is_err() {
            return Err(Error::Config("too many samples for u32 ids".into()));
        }
        let splits: Vec<Split> = Split::ALL
            .iter()
            .flat_map(|&sp| std::iter::repeat_n(sp, counts.get(sp)))
            .collect();
        let samples = splits
            .par_iter()
            .enumerate()
            .map(|(i, &split)| {
                let mut rng = sample_rng(seed, i as u64);
                generate_sample(&mut rng, &catalog, &config, i as u32, split)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest: DatasetManifest {
                format_version: DATASET_VERSION,
                seed,
                counts,
                config,
                catalog,
            },
            samples,
        })
    }

    pub fn split(&self, split: Split) -> &[SyntheticSample] {
        let c = &self.manifest.counts;
        let (start, len) = match split {
            Split::Train => (0, c.train),
            Split::Val => (c.train, c.val),
            Split::Test => (c.train + c.val, c.test),
        };
        &self.samples[start..start + len]
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.manifest.catalog
    }

    pub fn sample(&self, id: u32) -> Option<&SyntheticSample> {
        self.samples.get(id as usize)
    }
}
