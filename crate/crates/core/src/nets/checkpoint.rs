//! Checkpoint serialization.
//!
//! Byte layout, little-endian throughout:
//!
//! ```text
//! magic        5 bytes   "SDHN1"
//! digest_len   u32       length of the config digest string
//! digest       utf-8     hex SHA-256 stamped by the writer
//! n_params     u32
//! per parameter, in declared order:
//!   name_len   u32
//!   name       utf-8
//!   rows       u32
//!   cols       u32
//!   data       rows*cols f32 values, row-major
//! ```

use super::ParamSet;
use crate::diffnum::Matrix;
use std::io::{Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"SDHN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic: SDHN1 expected")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

/// Write all parameters (cast to f32) with the given config digest.
pub fn write_checkpoint(
    mut w: impl Write,
    digest: &str,
    params: &ParamSet,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&(digest.len() as u32).to_le_bytes())?;
    w.write_all(digest.as_bytes())?;
    w.write_all(&(params.entries().len() as u32).to_le_bytes())?;
    for entry in params.entries() {
        w.write_all(&(entry.name.len() as u32).to_le_bytes())?;
        w.write_all(entry.name.as_bytes())?;
        w.write_all(&(entry.value.rows() as u32).to_le_bytes())?;
        w.write_all(&(entry.value.cols() as u32).to_le_bytes())?;
        for v in entry.value.data() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint back as (digest, named matrices).
pub fn read_checkpoint(mut r: impl Read) -> Result<(String, Vec<(String, Matrix)>), CheckpointError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let digest_len = read_u32(&mut r)? as usize;
    if digest_len > 1024 {
        return Err(CheckpointError::Corrupt(format!("digest length {digest_len}")));
    }
    let mut digest_bytes = vec![0u8; digest_len];
    r.read_exact(&mut digest_bytes)?;
    let digest = String::from_utf8(digest_bytes)
        .map_err(|_| CheckpointError::Corrupt("digest is not utf-8".into()))?;

    let n_params = read_u32(&mut r)? as usize;
    if n_params > 10_000 {
        return Err(CheckpointError::Corrupt(format!("parameter count {n_params}")));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1024 {
            return Err(CheckpointError::Corrupt(format!("name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("parameter name is not utf-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows.saturating_mul(cols) > 100_000_000 {
            return Err(CheckpointError::Corrupt(format!("parameter {name} claims {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        let matrix = Matrix::from_vec(rows, cols, data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        params.push((name, matrix));
    }
    Ok((digest, params))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
