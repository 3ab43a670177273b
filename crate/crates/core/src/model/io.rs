//! Weight files.
//!
//! Layout (little-endian): magic `SPW1`, version `u32`, entry count `u32`,
//! then per entry the name (`u32` length + UTF-8), rank `u32`, extents
//! `u64` each, dtype `u32` (0 = f32) and the payload; a CRC-32 of all
//! preceding bytes closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use super::arch::ArchConfig;
use super::params::{check_params, ModelParams};
use crate::binfmt::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;

const MAGIC: [u8; 4] = *b"SPW1";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

pub fn encode_tensors(tensors: &BTreeMap<String, Tensor<f32>>) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC, VERSION);
    e.u32(tensors.len() as u32);
    for (name, t) in tensors {
        e.str(name);
        e.u32(t.rank() as u32);
        for &x in t.shape() {
            e.u64(x as u64);
        }
        e.u32(DTYPE_F32);
        e.f32s(t.data());
    }
    e.finish()
}

pub fn decode_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>, FormatError> {
    let mut d = Decoder::open(bytes, MAGIC, VERSION)?;
    let count = d.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name = d.str()?;
        let extents = d.extents(8)?;
        let dtype = d.u32()?;
        if dtype != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let data = d.f32_payload(&extents)?;
        let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Header(e.to_string()))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(FormatError::Header(format!("duplicate entry {name}")));
        }
    }
    d.finish()?;
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    write_atomic(path, &encode_tensors(tensors))
}

pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>> {
    decode_tensors(&read_file(path)?).map_err(|k| Error::format(path, k))
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    save_tensors(path, params)
}

/// Loads a weight file and checks every entry against `cfg`. Nothing is
/// returned unless the whole file matches.
pub fn load_params(path: &Path, cfg: &ArchConfig) -> Result<ModelParams> {
    let params = load_tensors(path)?;
    check_params(&params, cfg)?;
    Ok(params)
}
