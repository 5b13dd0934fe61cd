//! Wire formats for sparse tensors and their exact size accounting.
//!
//! Every format spends 32 bits per transmitted value. They differ in how
//! indices are named:
//!
//! | format             | index bits                       | value bits           |
//! |--------------------|----------------------------------|----------------------|
//! | COO (width `w`)    | `w * nnz`                        | `32 * nnz`           |
//! | Bitmap             | `M`                              | `32 * nnz`           |
//! | TensorBlock(`B`)   | `64 * blocks`                    | `32 * B * blocks`    |
//! | HashBitmap         | `|𝕀_i|`                          | `32 * nnz`           |
//!
//! Bitmaps are packed 64 bits per little-endian `u64` word, bit `j` of word
//! `w` naming position `64 w + j`; trailing bits are zero. Bitmap and hash
//! bitmap values follow ascending position order.

mod frame;
mod universe;

use serde::{Deserialize, Serialize};

pub use frame::{read_frame, write_frame, FRAME_HEADER_LEN};
pub use universe::{plain_bitmap_pull_total, pull_bitmap_total, HashUniverse};

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

pub const VALUE_BITS: u64 = 32;
pub const BLOCK_ID_BITS: u64 = 64;
pub const DEFAULT_BLOCK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexWidth {
    U32,
    U64,
}

impl IndexWidth {
    pub fn bits(self) -> u64 {
        match self {
            IndexWidth::U32 => 32,
            IndexWidth::U64 => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WireFormat {
    Coo(IndexWidth),
    Bitmap,
    TensorBlock(usize),
    HashBitmap,
}

impl WireFormat {
    /// COO with 64-bit indices.
    pub const COO: WireFormat = WireFormat::Coo(IndexWidth::U64);

    pub fn tensor_block() -> Self {
        WireFormat::TensorBlock(DEFAULT_BLOCK_SIZE)
    }

    pub fn name(&self) -> String {
        match self {
            WireFormat::Coo(w) => format!("coo{}", w.bits()),
            WireFormat::Bitmap => "bitmap".into(),
            WireFormat::TensorBlock(b) => format!("block{b}"),
            WireFormat::HashBitmap => "hash-bitmap".into(),
        }
    }
}

/// An encoded sparse tensor plus its size breakdown.
///
/// `universe` is the dense length `M`, which both ends already know; it is
/// carried for validation and is not counted in `payload_bits`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMessage {
    pub format: WireFormat,
    pub universe: u64,
    pub index_bits: u64,
    pub value_bits: u64,
    pub payload: Vec<u8>,
}

impl EncodedMessage {
    pub fn payload_bits(&self) -> u64 {
        self.index_bits + self.value_bits
    }
}

/// Encodes `t` in `format`. `HashBitmap` needs the receiving server's universe and
/// fails with [`Error::IndexOutsideUniverse`] for any index outside it.
pub fn encode(
    t: &SparseTensor,
    format: WireFormat,
    universe: Option<&HashUniverse>,
) -> Result<EncodedMessage> {
    let nnz = t.nnz() as u64;
    let m = t.universe();
    let (index_bits, value_bits, payload) = match format {
        WireFormat::Coo(width) => {
            let mut payload = Vec::with_capacity(t.nnz() * (width.bits() as usize / 8 + 4));
            for &i in t.indices() {
                match width {
                    IndexWidth::U64 => payload.extend_from_slice(&i.to_le_bytes()),
                    IndexWidth::U32 => {
                        let narrow = u32::try_from(i).map_err(|_| {
                            Error::InvalidTensor(format!("index {i} does not fit 32-bit COO"))
                        })?;
                        payload.extend_from_slice(&narrow.to_le_bytes());
                    }
                }
            }
            push_values(&mut payload, t.values().iter().copied());
            (width.bits() * nnz, VALUE_BITS * nnz, payload)
        }
        WireFormat::Bitmap => {
            let sorted = t.sorted();
            let mut payload = pack_bits(m as usize, sorted.indices().iter().map(|&i| i as usize));
            push_values(&mut payload, sorted.values().iter().copied());
            (m, VALUE_BITS * nnz, payload)
        }
        WireFormat::TensorBlock(block) => {
            if block == 0 {
                return Err(Error::InvalidTensor("tensor block size must be >= 1".into()));
            }
            let sorted = t.sorted();
            let mut payload = Vec::new();
            let mut blocks = 0u64;
            let mut entries = sorted.iter().peekable();
            while let Some(&(first, _)) = entries.peek() {
                let id = first / block as u64;
                let base = id * block as u64;
                let mut dense = vec![0f32; block];
                while let Some(&(i, v)) = entries.peek() {
                    if i / block as u64 != id {
                        break;
                    }
                    dense[(i - base) as usize] = v;
                    entries.next();
                }
                payload.extend_from_slice(&id.to_le_bytes());
                push_values(&mut payload, dense);
                blocks += 1;
            }
            (
                BLOCK_ID_BITS * blocks,
                VALUE_BITS * block as u64 * blocks,
                payload,
            )
        }
        WireFormat::HashBitmap => {
            let universe = universe.ok_or_else(|| {
                Error::InvalidHashParams("hash bitmap encoding needs the server's universe".into())
            })?;
            let sorted = t.sorted();
            let positions = sorted
                .indices()
                .iter()
                .map(|&i| {
                    universe.position(i).ok_or(Error::IndexOutsideUniverse {
                        index: i,
                        server: universe.server(),
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            let mut payload = pack_bits(universe.len(), positions.into_iter());
            push_values(&mut payload, sorted.values().iter().copied());
            (universe.len() as u64, VALUE_BITS * nnz, payload)
        }
    };
    Ok(EncodedMessage {
        format,
        universe: m,
        index_bits,
        value_bits,
        payload,
    })
}

/// Inverse of [`encode`]. Tensor blocks carry explicit zeros for the empty
/// slots of a non-empty block; decoding drops every zero, so a stored `0.0`
/// entry does not survive that format.
pub fn decode(msg: &EncodedMessage, universe: Option<&HashUniverse>) -> Result<SparseTensor> {
    let m = msg.universe;
    if m == 0 {
        return Err(malformed("universe must be at least 1"));
    }
    match msg.format {
        WireFormat::Coo(width) => {
            let stride = width.bits() as usize / 8 + 4;
            if !msg.payload.len().is_multiple_of(stride) {
                return Err(malformed("COO payload is not a whole number of entries"));
            }
            let nnz = msg.payload.len() / stride;
            check_bits(msg, width.bits() * nnz as u64, VALUE_BITS * nnz as u64)?;
            let (idx_bytes, val_bytes) = msg.payload.split_at(nnz * (stride - 4));
            let indices: Vec<u64> = match width {
                IndexWidth::U64 => idx_bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                IndexWidth::U32 => idx_bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
                    .collect(),
            };
            SparseTensor::new(m, indices, read_values(val_bytes))
                .map_err(|e| malformed(&e.to_string()))
        }
        WireFormat::Bitmap => {
            let (positions, values) = unpack_bitmap(&msg.payload, m as usize)?;
            check_bits(msg, m, VALUE_BITS * values.len() as u64)?;
            let indices = positions.into_iter().map(|p| p as u64).collect();
            Ok(SparseTensor::from_sorted_unchecked(m, indices, values))
        }
        WireFormat::TensorBlock(block) => {
            if block == 0 {
                return Err(malformed("tensor block size must be >= 1"));
            }
            let stride = 8 + 4 * block;
            if !msg.payload.len().is_multiple_of(stride) {
                return Err(malformed("tensor block payload is not a whole number of blocks"));
            }
            let blocks = (msg.payload.len() / stride) as u64;
            check_bits(msg, BLOCK_ID_BITS * blocks, VALUE_BITS * block as u64 * blocks)?;
            let mut indices = Vec::new();
            let mut values = Vec::new();
            let mut prev_id: Option<u64> = None;
            for chunk in msg.payload.chunks_exact(stride) {
                let id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
                if prev_id.is_some_and(|p| p >= id) {
                    return Err(malformed("tensor block ids must be strictly ascending"));
                }
                prev_id = Some(id);
                let base = id
                    .checked_mul(block as u64)
                    .filter(|&b| b < m)
                    .ok_or_else(|| malformed("tensor block id outside the universe"))?;
                for (off, v) in read_values(&chunk[8..]).into_iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let idx = base + off as u64;
                    if idx >= m {
                        return Err(malformed("non-zero padding beyond the universe"));
                    }
                    indices.push(idx);
                    values.push(v);
                }
            }
            Ok(SparseTensor::from_sorted_unchecked(m, indices, values))
        }
        WireFormat::HashBitmap => {
            let universe = universe.ok_or_else(|| {
                Error::InvalidHashParams("hash bitmap decoding needs the server's universe".into())
            })?;
            if msg.index_bits != universe.len() as u64 {
                return Err(malformed("hash bitmap length differs from the server's universe"));
            }
            let (positions, values) = unpack_bitmap(&msg.payload, universe.len())?;
            check_bits(msg, universe.len() as u64, VALUE_BITS * values.len() as u64)?;
            let indices: Vec<u64> = positions.into_iter().map(|p| universe.indices()[p]).collect();
            if indices.last().is_some_and(|&i| i >= m) {
                return Err(malformed("hash universe exceeds the tensor universe"));
            }
            Ok(SparseTensor::from_sorted_unchecked(m, indices, values))
        }
    }
}

fn malformed(msg: &str) -> Error {
    Error::MalformedPayload(msg.to_string())
}

fn check_bits(msg: &EncodedMessage, index_bits: u64, value_bits: u64) -> Result<()> {
    if msg.index_bits != index_bits || msg.value_bits != value_bits {
        return Err(malformed(&format!(
            "declared {}+{} bits, payload holds {index_bits}+{value_bits}",
            msg.index_bits, msg.value_bits
        )));
    }
    Ok(())
}

fn push_values(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_values(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn pack_bits(len: usize, positions: impl Iterator<Item = usize>) -> Vec<u8> {
    let mut words = vec![0u64; words_for(len)];
    for p in positions {
        words[p / 64] |= 1u64 << (p % 64);
    }
    let mut out = Vec::with_capacity(words.len() * 8);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Set positions of a `len`-bit bitmap followed by one f32 per set bit.
fn unpack_bitmap(payload: &[u8], len: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let word_bytes = words_for(len) * 8;
    if payload.len() < word_bytes {
        return Err(malformed("bitmap payload shorter than its bitmap"));
    }
    let (bits, vals) = payload.split_at(word_bytes);
    let mut positions = Vec::new();
    for (w, chunk) in bits.chunks_exact(8).enumerate() {
        let mut word = u64::from_le_bytes(chunk.try_into().unwrap());
        while word != 0 {
            let bit = word.trailing_zeros() as usize;
            positions.push(w * 64 + bit);
            word &= word - 1;
        }
    }
    if positions.last().is_some_and(|&p| p >= len) {
        return Err(malformed("bitmap has bits set past its length"));
    }
    if vals.len() != positions.len() * 4 {
        return Err(malformed(&format!(
            "bitmap names {} entries but carries {} value bytes",
            positions.len(),
            vals.len()
        )));
    }
    Ok((positions, read_values(vals)))
}
