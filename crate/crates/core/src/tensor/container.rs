//! Flat binary tensor container.
//!
//! Layout: the magic bytes `SPOA1`, then for each tensor a little-endian
//! `u32` name length, the UTF-8 name, four little-endian `u32` dimensions and
//! `d0*d1*d2*d3` little-endian `f64` values. Tensors run to end of file.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"SPOA1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: not a SPOA1 container")]
    BadMagic,
    #[error("truncated container while reading {0}")]
    Truncated(&'static str),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor {name} has {found} values but dimensions {dims:?}")]
    BadLength {
        name: String,
        dims: [u32; 4],
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: [u32; 4],
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: [u32; 4], data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    /// A one-element entry, used for counters and hyper-parameters.
    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, [1, 1, 1, 1], vec![value])
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let n = data.len() as u32;
        Self::new(name, [n, 1, 1, 1], data)
    }

    fn expected_len(dims: [u32; 4]) -> usize {
        dims.iter().map(|&d| d as usize).product()
    }
}

pub fn write_container<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<(), ContainerError> {
    w.write_all(MAGIC)?;
    for t in tensors {
        if t.data.len() != NamedTensor::expected_len(t.dims) {
            return Err(ContainerError::BadLength {
                name: t.name.clone(),
                dims: t.dims,
                found: t.data.len(),
            });
        }
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        for d in t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, ContainerError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut cur = &bytes[MAGIC.len()..];
    let mut out = Vec::new();
    while !cur.is_empty() {
        let name_len = take_u32(&mut cur, "name length")? as usize;
        let name = take(&mut cur, name_len, "name")?;
        let name = std::str::from_utf8(name)
            .map_err(|_| ContainerError::BadName)?
            .to_owned();
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = take_u32(&mut cur, "dimensions")?;
        }
        let n = NamedTensor::expected_len(dims);
        let payload = take(&mut cur, n.checked_mul(8).ok_or(ContainerError::Truncated("payload"))?, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
    if cur.len() < n {
        return Err(ContainerError::Truncated(what));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn take_u32(cur: &mut &[u8], what: &'static str) -> Result<u32, ContainerError> {
    let b = take(cur, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}
