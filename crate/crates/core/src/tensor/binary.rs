//! On-disk sparse tensor layout, little-endian:
//!
//! ```text
//! magic "ZSPT" | u32 version | u64 M | u64 count | count x u64 index | count x f32 value
//! ```

use std::io::{Read, Write};

use super::SparseTensor;
use crate::error::{Error, Result};

pub const SPARSE_MAGIC: [u8; 4] = *b"ZSPT";
pub const SPARSE_VERSION: u32 = 1;

pub fn write_sparse<W: Write>(mut w: W, t: &SparseTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + t.nnz() * 12);
    buf.extend_from_slice(&SPARSE_MAGIC);
    buf.extend_from_slice(&SPARSE_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.universe().to_le_bytes());
    buf.extend_from_slice(&(t.nnz() as u64).to_le_bytes());
    for &i in t.indices() {
        buf.extend_from_slice(&i.to_le_bytes());
    }
    for &v in t.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_sparse<R: Read>(mut r: R) -> Result<SparseTensor> {
    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|e| Error::MalformedPayload(format!("sparse tensor header: {e}")))?;
    if header[..4] != SPARSE_MAGIC {
        return Err(Error::MalformedPayload("bad magic, expected ZSPT".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != SPARSE_VERSION {
        return Err(Error::MalformedPayload(format!("unsupported version {version}")));
    }
    let universe = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if count > universe {
        return Err(Error::MalformedPayload(format!(
            "{count} entries cannot fit a universe of {universe}"
        )));
    }
    let count = count as usize;
    let mut body = vec![0u8; count * 12];
    r.read_exact(&mut body)
        .map_err(|e| Error::MalformedPayload(format!("sparse tensor body: {e}")))?;
    let (idx_bytes, val_bytes) = body.split_at(count * 8);
    let indices = idx_bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = val_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SparseTensor::new(universe, indices, values)
        .map_err(|e| Error::MalformedPayload(e.to_string()))
}
