//! Flat little-endian parameter checkpoints.
//!
//! Layout: header (magic `NGRD`, version u32, tensor count u32), then per
//! tensor: name length u32 + UTF-8 name, rank u32, extents u64[], f64
//! payload. Values are widened to f64 on disk regardless of the in-memory
//! scalar type.

use super::tensor::Tensor;
use crate::scalar::Scalar;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"NGRD";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor {name}: payload size {len} does not match shape {shape:?}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
}

pub fn save_checkpoint<F: Scalar, P: AsRef<Path>>(
    path: P,
    entries: &[(String, &Tensor<F>)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &e in tensor.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|_| CheckpointError::Truncated(what))
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &'static str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_checkpoint<F: Scalar, P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(String, Tensor<F>)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r, "tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name_buf, "name")?;
        let name = String::from_utf8(name_buf).map_err(|_| CheckpointError::BadName)?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            read_exact_or(&mut r, &mut b, "payload")?;
            data.push(F::cast(f64::from_le_bytes(b)));
        }
        let len = data.len();
        let tensor = Tensor::new(shape.clone(), data).map_err(|_| {
            CheckpointError::ShapeMismatch {
                name: name.clone(),
                shape,
                len,
            }
        })?;
        out.push((name, tensor));
    }
    Ok(out)
}
