//! Framing of [`EncodedMessage`] for storage and transport.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       1     format tag: 1 = COO, 2 = Bitmap, 3 = TensorBlock, 4 = HashBitmap
//! 1       4     format parameter: COO index width in bits, block size, or 0
//! 5       8     payload_bits (index_bits + value_bits)
//! 13      8     index_bits
//! 21      8     universe M
//! 29      8     payload length in bytes
//! 37      ...   payload bytes
//! ```

use std::io::{Read, Write};

use super::{EncodedMessage, IndexWidth, WireFormat};
use crate::error::{Error, Result};

pub const FRAME_HEADER_LEN: usize = 37;

fn tag_of(format: WireFormat) -> (u8, u32) {
    match format {
        WireFormat::Coo(w) => (1, w.bits() as u32),
        WireFormat::Bitmap => (2, 0),
        WireFormat::TensorBlock(b) => (3, b as u32),
        WireFormat::HashBitmap => (4, 0),
    }
}

fn format_of(tag: u8, param: u32) -> Result<WireFormat> {
    Ok(match (tag, param) {
        (1, 32) => WireFormat::Coo(IndexWidth::U32),
        (1, 64) => WireFormat::Coo(IndexWidth::U64),
        (2, 0) => WireFormat::Bitmap,
        (3, b) if b > 0 => WireFormat::TensorBlock(b as usize),
        (4, 0) => WireFormat::HashBitmap,
        _ => {
            return Err(Error::MalformedPayload(format!(
                "unknown format tag {tag} with parameter {param}"
            )))
        }
    })
}

pub fn write_frame<W: Write>(mut w: W, msg: &EncodedMessage) -> Result<()> {
    let (tag, param) = tag_of(msg.format);
    if let WireFormat::TensorBlock(b) = msg.format {
        if b > u32::MAX as usize {
            return Err(Error::InvalidTensor(format!("block size {b} exceeds u32")));
        }
    }
    let mut header = Vec::with_capacity(FRAME_HEADER_LEN);
    header.push(tag);
    header.extend_from_slice(&param.to_le_bytes());
    header.extend_from_slice(&msg.payload_bits().to_le_bytes());
    header.extend_from_slice(&msg.index_bits.to_le_bytes());
    header.extend_from_slice(&msg.universe.to_le_bytes());
    header.extend_from_slice(&(msg.payload.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&msg.payload)?;
    Ok(())
}

pub fn read_frame<R: Read>(mut r: R) -> Result<EncodedMessage> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::MalformedPayload("truncated frame header".into()))?;
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let format = format_of(header[0], u32::from_le_bytes(header[1..5].try_into().unwrap()))?;
    let payload_bits = u64_at(5);
    let index_bits = u64_at(13);
    let universe = u64_at(21);
    let len = u64_at(29);
    let value_bits = payload_bits
        .checked_sub(index_bits)
        .ok_or_else(|| Error::MalformedPayload("index bits exceed payload bits".into()))?;
    let mut payload = Vec::new();
    r.take(len)
        .read_to_end(&mut payload)
        .map_err(Error::from)?;
    if payload.len() as u64 != len {
        return Err(Error::MalformedPayload("truncated frame payload".into()));
    }
    Ok(EncodedMessage {
        format,
        universe,
        index_bits,
        value_bits,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode, encode};
    use crate::tensor::SparseTensor;

    #[test]
    fn frame_round_trip() {
        let t = SparseTensor::new(300, vec![299, 4, 17], vec![1.0, 2.0, 3.0]).unwrap();
        for fmt in [
            WireFormat::COO,
            WireFormat::Coo(IndexWidth::U32),
            WireFormat::Bitmap,
            WireFormat::TensorBlock(16),
        ] {
            let msg = encode(&t, fmt, None).unwrap();
            let mut buf = Vec::new();
            write_frame(&mut buf, &msg).unwrap();
            assert_eq!(buf.len(), FRAME_HEADER_LEN + msg.payload.len());
            let back = read_frame(buf.as_slice()).unwrap();
            assert_eq!(back, msg);
            assert_eq!(decode(&back, None).unwrap(), t);
        }
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(read_frame(&[1u8, 2, 3][..]).is_err());
        let t = SparseTensor::new(10, vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &encode(&t, WireFormat::COO, None).unwrap()).unwrap();
        let mut bad_tag = buf.clone();
        bad_tag[0] = 9;
        assert!(read_frame(bad_tag.as_slice()).is_err());
        buf.pop();
        assert!(read_frame(buf.as_slice()).is_err());
    }
}
