// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Flat little-endian dataset files.
//!
//! ```text
//! magic   4 bytes  "AFLD"
//! version u32      1
//! classes u32
//! dim     u32
//! n       u64
//! inputs  n * dim f64, row-major
//! labels  n u32
//! ```

use std::io::{Read, Write};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"AFLD";
const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(ds.classes as u32).to_le_bytes())?;
    out.write_all(&(ds.dim() as u32).to_le_bytes())?;
    out.write_all(&(ds.len() as u64).to_le_bytes())?;
    for v in ds.inputs.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    for &y in &ds.labels {
        out.write_all(&(y as u32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    if &read_array::<4, _>(&mut input)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let classes = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let dim = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        values.push(f64::from_le_bytes(read_array(&mut input)?));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(read_array(&mut input)?) as usize);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Dataset::new(Tensor::matrix(n, dim, values)?, labels, classes)
        .map_err(|e| Error::Format(e.to_string()))
}
