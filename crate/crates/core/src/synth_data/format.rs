//! Single-file dataset container.
//!
//! ```text
//! magic      8 bytes  "TIERDSET"
//! version    u32
//! manifest   u32 length + UTF-8 JSON
//! records    one per sample, train then val then test:
//!              u32 payload length, payload, u32 CRC32(payload)
//! payload    u32 id, u8 split, pixels as f32 (side*side),
//!            tokens as u16 (max_len), alignment bits (max_len x P, row-major,
//!            LSB first), label bits (classes)
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{AlignmentMask, Dataset, DatasetManifest, Split, SyntheticSample};
use crate::container::{pack_bits, read_file, unpack_bits, write_file, ByteReader, ByteWriter};
use crate::encoders::PAD_TOKEN;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"TIERDSET";
pub const DATASET_VERSION: u32 = 1;

struct RecordLayout {
    pixels: usize,
    tokens: usize,
    patches: usize,
    classes: usize,
}

impl RecordLayout {
    fn of(manifest: &DatasetManifest) -> Self {
        let cfg = &manifest.config;
        Self {
            pixels: cfg.image_side() * cfg.image_side(),
            tokens: cfg.max_len,
            patches: cfg.num_patches(),
            classes: manifest.catalog.classes.len(),
        }
    }

    fn payload_len(&self) -> usize {
        4 + 1
            + 4 * self.pixels
            + 2 * self.tokens
            + (self.tokens * self.patches).div_ceil(8)
            + self.classes.div_ceil(8)
    }
}

fn encode_record(layout: &RecordLayout, s: &SyntheticSample) -> Result<Vec<u8>> {
    if s.pixels.len() != layout.pixels
        || s.tokens.len() != layout.tokens
        || s.labels.len() != layout.classes
        || s.alignment.cols() != layout.patches
        || s.alignment.rows() > layout.tokens
    {
        return Err(Error::Config(format!(
            "sample {} does not match the manifest dimensions",
            s.id
        )));
    }
    let mut w = ByteWriter::new();
    w.u32(s.id);
    w.u8(s.split.tag());
    s.pixels.iter().for_each(|&p| w.f32(p));
    s.tokens.iter().for_each(|&t| w.u16(t));
    let mask = (0..layout.tokens).flat_map(|r| {
        (0..layout.patches).map(move |c| r < s.alignment.rows() && s.alignment.get(r, c))
    });
    w.bytes(&pack_bits(mask));
    w.bytes(&pack_bits(s.labels.iter().copied()));
    Ok(w.into_inner())
}

fn decode_record(layout: &RecordLayout, index: usize, payload: &[u8]) -> Result<SyntheticSample> {
    let mut r = ByteReader::new(payload);
    r.record = Some(index);
    let id = r.u32()?;
    let split = Split::from_tag(r.u8()?)
        .ok_or_else(|| Error::integrity(Some(index), "unknown split tag"))?;
    let pixels = (0..layout.pixels)
        .map(|_| r.f32())
        .collect::<Result<Vec<_>>>()?;
    let tokens = (0..layout.tokens)
        .map(|_| r.u16())
        .collect::<Result<Vec<_>>>()?;
    let mask_bits = unpack_bits(
        r.take((layout.tokens * layout.patches).div_ceil(8))?,
        layout.tokens * layout.patches,
    );
    let labels = unpack_bits(r.take(layout.classes.div_ceil(8))?, layout.classes);

    let rows = tokens.iter().filter(|&&t| t != PAD_TOKEN).count();
    if mask_bits[rows * layout.patches..].iter().any(|&b| b) {
        return Err(Error::integrity(Some(index), "alignment set on a pad row"));
    }
    let alignment = AlignmentMask::from_bits(
        rows,
        layout.patches,
        mask_bits[..rows * layout.patches].to_vec(),
    )?;
    Ok(SyntheticSample {
        id,
        split,
        pixels,
        tokens,
        alignment,
        labels,
    })
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let manifest = &dataset.manifest;
    if dataset.samples.len() != manifest.counts.total() {
        return Err(Error::Config(format!(
            "manifest lists {} samples, dataset holds {}",
            manifest.counts.total(),
            dataset.samples.len()
        )));
    }
    let layout = RecordLayout::of(manifest);
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.prefixed(&serde_json::to_vec(manifest)?)?;
    for s in &dataset.samples {
        w.checked_record(&encode_record(&layout, s)?)?;
    }
    Ok(w.into_inner())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_slice(r.prefixed()?)
        .map_err(|e| Error::integrity(None, format!("manifest: {e}")))?;
    manifest.config.validate()?;
    let layout = RecordLayout::of(&manifest);
    let expected = layout.payload_len();
    let mut samples = Vec::with_capacity(manifest.counts.total());
    for index in 0..manifest.counts.total() {
        r.record = Some(index);
        let payload = r.checked_record(Some(expected))?;
        let sample = decode_record(&layout, index, payload)?;
        if sample.id as usize != index {
            return Err(Error::integrity(
                Some(index),
                format!("record holds sample id {}", sample.id),
            ));
        }
        samples.push(sample);
    }
    r.record = None;
    r.expect_end()?;
    let dataset = Dataset { manifest, samples };
    for split in Split::ALL {
        if let Some(bad) = dataset.split(split).iter().find(|s| s.split != split) {
            return Err(Error::integrity(
                Some(bad.id as usize),
                format!(
                    "sample filed under {} but tagged {}",
                    split.name(),
                    bad.split.name()
                ),
            ));
        }
    }
    Ok(dataset)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(dataset)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}
