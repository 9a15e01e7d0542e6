//! `KDLP` parameter files.
//!
//! Layout (little-endian): magic `KDLP`, version u16, spec hash u64, layer
//! count u32, then for each layer its weight and bias tensors as
//! (rank u8, extents u32 × rank, payload f64 × numel), then a CRC-64 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use super::{LayerParams, ModelSpec, Parameters};
use crate::codec::{seal, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "KDLP";
const VERSION: u16 = 1;
const WHAT: &str = "parameter";
const MAX_RANK: u8 = 8;

pub fn write_parameters(spec: &ModelSpec, params: &Parameters) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&spec.spec_hash().to_le_bytes());
    buf.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for t in params.tensors() {
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    seal(&mut buf);
    buf
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    let rank = r.u8()?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::SpecMismatch(format!("tensor rank {rank} at byte {}", r.position() - 1)));
    }
    let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or(Error::Truncated(WHAT))?;
    let bytes = r.take(numel.checked_mul(8).ok_or(Error::Truncated(WHAT))?)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data).map_err(|e| Error::SpecMismatch(e.to_string()))
}

/// Parses and verifies a parameter file against `spec`.
///
/// Errors are `BadMagic`/`UnsupportedVersion` for foreign files, `Truncated`
/// when the body ends early, `Checksum` on trailer mismatch and
/// `SpecMismatch` when the file was written for a different model.
pub fn read_parameters(bytes: &[u8], spec: &ModelSpec) -> Result<Parameters> {
    let mut r = Reader::new(bytes, WHAT);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { what: WHAT, version });
    }
    let hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count.saturating_mul(2) {
        tensors.push(read_tensor(&mut r)?);
    }
    r.finish_with_crc()?;

    if hash != spec.spec_hash() {
        return Err(Error::SpecMismatch(format!(
            "file written for spec hash {hash:#018x}, expected {:#018x} ({})",
            spec.spec_hash(),
            spec.describe()
        )));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::with_capacity(count);
    while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
        layers.push(LayerParams { weight, bias });
    }
    Parameters::new(spec, layers)
}

pub fn save_parameters(path: impl AsRef<Path>, spec: &ModelSpec, params: &Parameters) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_parameters(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn load_parameters(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Parameters> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_parameters(&bytes, spec)
}
