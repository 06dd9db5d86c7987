//! Binary dumps of quantized chunks: wire-encoded chunks back to back.

use std::path::Path;

use sdp4bit_core::quant::{wire_decode, wire_encode, Bits, QuantizedChunk, HEADER_LEN};
use sdp4bit_core::Error;

use crate::error::{CliError, Result};

pub fn encode_stream(chunks: &[QuantizedChunk]) -> Vec<u8> {
    chunks.iter().flat_map(wire_encode).collect()
}

/// Splits a dump into chunks using each header's length fields.
pub fn decode_stream(mut buf: &[u8]) -> Result<Vec<QuantizedChunk>, Error> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        if buf.len() < HEADER_LEN {
            return Err(Error::Truncated {
                needed: HEADER_LEN,
                got: buf.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
        let bits = Bits::from_u32(word(0))?;
        let group = word(4) as usize;
        if group == 0 {
            return Err(Error::ZeroGroupSize);
        }
        let n = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
        let total = HEADER_LEN + bits.packed_len(n) + n.div_ceil(group) * 4;
        if buf.len() < total {
            return Err(Error::Truncated {
                needed: total,
                got: buf.len(),
            });
        }
        out.push(wire_decode(&buf[..total])?);
        buf = &buf[total..];
    }
    Ok(out)
}

pub fn write_dump(path: &Path, chunks: &[QuantizedChunk]) -> Result<()> {
    std::fs::write(path, encode_stream(chunks)).map_err(CliError::io(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdp4bit_core::quant::quantize;

    #[test]
    fn round_trip() {
        let a = quantize(&[1.0, -2.0, 3.5], Bits::Four, 2).unwrap();
        let b = quantize(&[0.25; 9], Bits::Eight, 4).unwrap();
        let bytes = encode_stream(&[a.clone(), b.clone()]);
        assert_eq!(decode_stream(&bytes).unwrap(), vec![a, b]);
        assert!(decode_stream(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_stream(&[]).unwrap().is_empty());
    }
}
