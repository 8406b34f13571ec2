//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `UNCN`, `u32` version, `u32` length of a JSON
//! header, the header, `u32` tensor count, then per tensor: `u32` name length,
//! name bytes, `u8` dtype (0 = f64), `u32` rank, `u64` per dimension, payload.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::features::FeatureSpace;
use super::model::{EncoderModel, TrainedHeads};
use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 4] = b"UNCN";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    space: FeatureSpace,
    trained: TrainedHeads,
    frozen: BTreeSet<String>,
    config_hash: Option<String>,
}

/// Short identifier derived from the weight checksum.
pub fn checkpoint_id(model: &EncoderModel) -> String {
    model.weights.checksum()[..16].to_string()
}

fn corrupt(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint: {e}"))
}

pub fn write_to(model: &EncoderModel, config_hash: Option<&str>, mut w: impl Write) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        space: model.space.clone(),
        trained: model.trained,
        frozen: model.frozen.clone(),
        config_hash: config_hash.map(str::to_string),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let wr = |r: std::io::Result<()>| r.map_err(|e| Error::Checkpoint(e.to_string()));
    wr(w.write_all(MAGIC))?;
    wr(w.write_u32::<LittleEndian>(VERSION))?;
    wr(w.write_u32::<LittleEndian>(json.len() as u32))?;
    wr(w.write_all(&json))?;
    let tensors = model.weights.named();
    wr(w.write_u32::<LittleEndian>(tensors.len() as u32))?;
    for (name, t) in tensors {
        wr(w.write_u32::<LittleEndian>(name.len() as u32))?;
        wr(w.write_all(name.as_bytes()))?;
        wr(w.write_u8(DTYPE_F64))?;
        wr(w.write_u32::<LittleEndian>(2))?;
        wr(w.write_u64::<LittleEndian>(t.nrows() as u64))?;
        wr(w.write_u64::<LittleEndian>(t.ncols() as u64))?;
        for &x in t.iter() {
            wr(w.write_f64::<LittleEndian>(x))?;
        }
    }
    Ok(())
}

/// Reads a checkpoint; returns the model and the recorded config hash.
pub fn read_from(mut r: impl Read) -> Result<(EncoderModel, Option<String>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(corrupt)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = EncoderModel::new(header.config, header.space)?;
    model.trained = header.trained;
    model.frozen = header.frozen;

    let count = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let names = model.weights.names();
    if count != names.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            names.len()
        )));
    }
    let mut tensors = model.weights.tensors_mut();
    for (expected, target) in names.iter().zip(tensors.iter_mut()) {
        let nlen = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name).map_err(corrupt)?;
        if &name != expected {
            return Err(Error::Checkpoint(format!("expected tensor `{expected}`, found `{name}`")));
        }
        if r.read_u8().map_err(corrupt)? != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported dtype")));
        }
        let rank = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let rows = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
        let cols = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
        if (rows, cols) != target.dim() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {rows}x{cols}, expected {:?}",
                target.dim()
            )));
        }
        let mut data = vec![0f64; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(corrupt)?;
        **target = Array2::from_shape_vec((rows, cols), data).map_err(corrupt)?;
    }
    drop(tensors);
    if !model.weights.all_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok((model, header.config_hash))
}

pub fn save(model: &EncoderModel, path: &Path, config_hash: Option<&str>) -> Result<()> {
    let mut w = io::create(path)?;
    write_to(model, config_hash, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(EncoderModel, Option<String>)> {
    read_from(io::open(path)?)
}
