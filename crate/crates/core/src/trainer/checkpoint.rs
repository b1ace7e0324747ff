//! Checkpoint container.
//!
//! ```text
//! magic     8 bytes  "TIERCKPT"
//! version   u32
//! record 0  header JSON: config, dims, dtype, epoch, optimizer step, history
//! u32       tensor count
//! record i  one tensor: u16 name length, name, u8 dtype tag, u8 rank,
//!           u32 per dimension, f64 values
//! ```
//! Records are `u32 length, payload, u32 CRC32(payload)`. Tensors are the
//! model parameters followed by the Adam first and second moments
//! (`adam.m.<name>`, `adam.v.<name>`). Integrity errors name the record by
//! its position in the file, the header being record 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Checkpoint, EpochRecord, TrainConfig};
use crate::container::{read_file, write_file, ByteReader, ByteWriter};
use crate::encoders::{ModelDims, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TIERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

fn dtype_of<F: Scalar>() -> u8 {
    if F::epsilon().as_f64() == f64::from(f32::EPSILON) {
        DTYPE_F32
    } else {
        DTYPE_F64
    }
}

fn dtype_name(tag: u8) -> &'static str {
    match tag {
        DTYPE_F32 => "f32",
        _ => "f64",
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    dims: ModelDims,
    dtype: String,
    epoch: usize,
    optimizer_step: u64,
    history: Vec<EpochRecord>,
}

fn encode_tensor<F: Scalar>(name: &str, t: &Tensor<F>) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Config(format!("tensor name `{name}` too long")))?;
    w.u16(name_len);
    w.bytes(name.as_bytes());
    w.u8(dtype_of::<F>());
    w.u8(t.rank() as u8);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    t.data().iter().for_each(|v| w.f64(v.as_f64()));
    Ok(w.into_inner())
}

fn decode_tensor<F: Scalar>(index: usize, payload: &[u8]) -> Result<(String, Tensor<F>)> {
    let mut r = ByteReader::new(payload);
    r.record = Some(index);
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::integrity(Some(index), "tensor name is not UTF-8"))?
        .to_owned();
    let tag = r.u8()?;
    if tag != DTYPE_F32 && tag != DTYPE_F64 {
        return Err(Error::integrity(
            Some(index),
            format!("unknown dtype tag {tag}"),
        ));
    }
    let rank = r.u8()? as usize;
    let shape = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let numel: usize = shape.iter().product();
    if r.remaining() != 8 * numel {
        return Err(Error::integrity(
            Some(index),
            format!(
                "`{name}` holds {} value bytes for shape {shape:?}",
                r.remaining()
            ),
        ));
    }
    let data = (0..numel)
        .map(|_| r.f64().map(F::lit))
        .collect::<Result<Vec<_>>>()?;
    Ok((name, Tensor::new(shape, data)?))
}

pub fn encode_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>) -> Result<Vec<u8>> {
    let header = Header {
        config: ckpt.config.clone(),
        dims: ckpt.params.dims,
        dtype: dtype_name(dtype_of::<F>()).to_owned(),
        epoch: ckpt.epoch,
        optimizer_step: ckpt.optimizer.step,
        history: ckpt.history.clone(),
    };
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.checked_record(&serde_json::to_vec(&header)?)?;
    let count = 3 * PARAM_NAMES.len();
    w.u32(count as u32);
    for (name, t) in ckpt.params.named_tensors() {
        w.checked_record(&encode_tensor(name, t)?)?;
    }
    for (prefix, moments) in [
        ("adam.m.", &ckpt.optimizer.m),
        ("adam.v.", &ckpt.optimizer.v),
    ] {
        for (name, t) in PARAM_NAMES.iter().zip(moments) {
            w.checked_record(&encode_tensor(&format!("{prefix}{name}"), t)?)?;
        }
    }
    Ok(w.into_inner())
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    r.record = Some(0);
    let header: Header = serde_json::from_slice(r.checked_record(None)?)
        .map_err(|e| Error::integrity(Some(0), format!("header: {e}")))?;
    header.config.validate()?;
    header.dims.validate()?;
    r.record = None;
    let count = r.u32()? as usize;
    let expected = 3 * PARAM_NAMES.len();
    if count != expected {
        return Err(Error::integrity(
            None,
            format!("{count} tensors listed, expected {expected}"),
        ));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let index = i + 1;
        r.record = Some(index);
        tensors.push(decode_tensor::<F>(index, r.checked_record(None)?)?);
    }
    r.record = None;
    r.expect_end()?;

    let mut rest = tensors.split_off(PARAM_NAMES.len());
    let v = rest.split_off(PARAM_NAMES.len());
    let params = ModelParams::from_named(header.dims, tensors)?;
    let strip = |prefix: &str, list: Vec<(String, Tensor<F>)>| {
        list.into_iter()
            .map(|(name, t)| {
                name.strip_prefix(prefix)
                    .map(|n| (n.to_owned(), t))
                    .ok_or_else(|| Error::Config(format!("unexpected optimizer tensor `{name}`")))
            })
            .collect::<Result<Vec<_>>>()
    };
    // Moment tensors share the parameters' names and shapes.
    let m = ModelParams::from_named(header.dims, strip("adam.m.", rest)?)?;
    let v = ModelParams::from_named(header.dims, strip("adam.v.", v)?)?;
    let collect = |p: &ModelParams<F>| p.tensors().into_iter().cloned().collect::<Vec<_>>();
    let optimizer = Adam {
        config: header.config.adam,
        step: header.optimizer_step,
        m: collect(&m),
        v: collect(&v),
    };
    Ok(Checkpoint {
        config: header.config,
        params,
        optimizer,
        epoch: header.epoch,
        history: header.history,
    })
}

pub fn save_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    decode_checkpoint(&read_file(path)?)
}
