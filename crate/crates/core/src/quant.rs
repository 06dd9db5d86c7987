//! Group-wise symmetric linear quantization and its wire format.
//!
//! A tensor of `n` elements is cut into contiguous groups of `G` (the last
//! group may be shorter). Each group carries one scale `s = max |x|` and
//! integer codes `q = round(x / s * qmax)` with `qmax = 2^(k-1) - 1`, rounded
//! half away from zero. The code `-2^(k-1)` is never produced, so the
//! quantizer is sign-odd.
//!
//! # Wire layout
//!
//! All integers little-endian:
//!
//! | offset | size              | field                          |
//! |--------|-------------------|--------------------------------|
//! | 0      | 4                 | `k` (u32, 4 or 8)              |
//! | 4      | 4                 | `G` (u32, ≥ 1)                 |
//! | 8      | 8                 | `n` (u64)                      |
//! | 16     | ⌈n·k/8⌉           | codes, two's complement; for `k = 4` two per byte, low nibble first |
//! | …      | 4·⌈n/G⌉           | scales, IEEE-754 binary32      |

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::FlatTensor;

/// Supported code widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bits {
    Four,
    Eight,
}

impl Bits {
    pub fn from_u32(k: u32) -> Result<Self> {
        match k {
            4 => Ok(Bits::Four),
            8 => Ok(Bits::Eight),
            other => Err(Error::UnsupportedBits(other)),
        }
    }

    pub fn get(self) -> u32 {
        match self {
            Bits::Four => 4,
            Bits::Eight => 8,
        }
    }

    /// Largest code magnitude, `2^(k-1) - 1`.
    pub fn qmax(self) -> i32 {
        (1 << (self.get() - 1)) - 1
    }

    pub fn packed_len(self, n: usize) -> usize {
        (n * self.get() as usize).div_ceil(8)
    }
}

pub const HEADER_LEN: usize = 16;

/// Quantized payload: packed codes plus one scale per group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChunk {
    bits: Bits,
    group_size: usize,
    len: usize,
    packed: Vec<u8>,
    scales: Vec<f32>,
}

impl QuantizedChunk {
    pub fn bits(&self) -> Bits {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn num_groups(&self) -> usize {
        self.len.div_ceil(self.group_size)
    }

    /// Decoded integer codes.
    pub fn codes(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.code(i)).collect()
    }

    #[inline]
    fn code(&self, i: usize) -> i8 {
        match self.bits {
            Bits::Eight => self.packed[i] as i8,
            Bits::Four => {
                let byte = self.packed[i / 2];
                let nibble = if i.is_multiple_of(2) {
                    byte & 0x0F
                } else {
                    byte >> 4
                };
                // sign-extend the low four bits
                ((nibble << 4) as i8) >> 4
            }
        }
    }

    /// Bytes of codes plus scales at the given scale width, header excluded.
    pub fn payload_len(&self, scale_bits: u32) -> usize {
        self.packed.len() + self.scales.len() * scale_bits as usize / 8
    }

    /// Checks every structural invariant; used after decoding.
    fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::ZeroGroupSize);
        }
        if self.packed.len() != self.bits.packed_len(self.len) {
            return Err(Error::Corrupt("packed length does not match element count"));
        }
        if self.scales.len() != self.num_groups() {
            return Err(Error::Corrupt("scale count does not match group count"));
        }
        if self.scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Corrupt("scale is negative or non-finite"));
        }
        let qmax = self.bits.qmax();
        if (0..self.len).any(|i| i32::from(self.code(i)).abs() > qmax) {
            return Err(Error::Corrupt("code outside symmetric range"));
        }
        if self.bits == Bits::Four
            && self.len % 2 == 1
            && self.packed.last().is_some_and(|b| b >> 4 != 0)
        {
            return Err(Error::Corrupt("non-zero padding nibble"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dequant_value(code: i32, scale: f32, qmax: i32) -> f32 {
    ((f64::from(code) * f64::from(scale)) / f64::from(qmax)) as f32
}

/// Nearest-rounding group-wise quantization.
pub fn quantize(x: &[f32], bits: Bits, group_size: usize) -> Result<QuantizedChunk> {
    quantize_with(x, bits, group_size, libm::round)
}

/// Group-wise quantization with a caller-supplied rounding of the scaled value
/// `x / s * qmax`. The result is clamped to `[-qmax, qmax]`.
pub(crate) fn quantize_with<R>(
    x: &[f32],
    bits: Bits,
    group_size: usize,
    mut round: R,
) -> Result<QuantizedChunk>
where
    R: FnMut(f64) -> f64,
{
    if group_size == 0 {
        return Err(Error::ZeroGroupSize);
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let qmax = bits.qmax();
    let mut scales = Vec::with_capacity(x.len().div_ceil(group_size));
    let mut codes: Vec<i8> = Vec::with_capacity(x.len());
    for group in x.chunks(group_size) {
        let s = group.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        scales.push(s);
        if s == 0.0 {
            codes.extend(core::iter::repeat_n(0, group.len()));
            continue;
        }
        for &v in group {
            let q = round(f64::from(v) / f64::from(s) * f64::from(qmax))
                .clamp(-f64::from(qmax), f64::from(qmax));
            codes.push(q as i8);
        }
    }
    Ok(QuantizedChunk {
        bits,
        group_size,
        len: x.len(),
        packed: pack(&codes, bits),
        scales,
    })
}

fn pack(codes: &[i8], bits: Bits) -> Vec<u8> {
    match bits {
        Bits::Eight => codes.iter().map(|&c| c as u8).collect(),
        Bits::Four => codes
            .chunks(2)
            .map(|pair| {
                let lo = pair[0] as u8 & 0x0F;
                let hi = pair.get(1).map_or(0, |&c| c as u8 & 0x0F);
                lo | (hi << 4)
            })
            .collect(),
    }
}

/// `x̂_i = q_i · s_g / qmax`, restoring the original length.
pub fn dequantize(chunk: &QuantizedChunk) -> Result<FlatTensor> {
    if chunk.packed.len() != chunk.bits.packed_len(chunk.len)
        || chunk.scales.len() != chunk.num_groups()
    {
        return Err(Error::Corrupt("packed length does not match element count"));
    }
    let qmax = chunk.bits.qmax();
    let mut out = Vec::with_capacity(chunk.len);
    for (g, &s) in chunk.scales.iter().enumerate() {
        let start = g * chunk.group_size;
        let end = (start + chunk.group_size).min(chunk.len);
        out.extend((start..end).map(|i| dequant_value(i32::from(chunk.code(i)), s, qmax)));
    }
    FlatTensor::new(out)
}

/// Serializes a chunk using the layout in the module docs.
pub fn wire_encode(chunk: &QuantizedChunk) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + chunk.payload_len(32));
    buf.extend_from_slice(&chunk.bits.get().to_le_bytes());
    buf.extend_from_slice(&(chunk.group_size as u32).to_le_bytes());
    buf.extend_from_slice(&(chunk.len as u64).to_le_bytes());
    buf.extend_from_slice(&chunk.packed);
    for s in &chunk.scales {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf
}

/// Inverse of [`wire_encode`]; rejects truncated, oversized and malformed buffers.
pub fn wire_decode(buf: &[u8]) -> Result<QuantizedChunk> {
    if buf.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            got: buf.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
    let bits = Bits::from_u32(word(0))?;
    let group_size = word(4) as usize;
    if group_size == 0 {
        return Err(Error::ZeroGroupSize);
    }
    let len = usize::try_from(u64::from_le_bytes(buf[8..16].try_into().unwrap()))
        .map_err(|_| Error::Corrupt("element count overflows usize"))?;
    let packed_len = bits.packed_len(len);
    let groups = len.div_ceil(group_size);
    let needed = HEADER_LEN + packed_len + 4 * groups;
    if buf.len() < needed {
        return Err(Error::Truncated {
            needed,
            got: buf.len(),
        });
    }
    if buf.len() > needed {
        return Err(Error::Corrupt("trailing bytes after payload"));
    }
    let packed = buf[HEADER_LEN..HEADER_LEN + packed_len].to_vec();
    let scales = buf[HEADER_LEN + packed_len..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let chunk = QuantizedChunk {
        bits,
        group_size,
        len,
        packed,
        scales,
    };
    chunk.validate()?;
    Ok(chunk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_gaussian, fill_spiky, SeededRng};
    use alloc::vec;

    /// Scalar reference: one element at a time, no packing.
    fn reference_codes(x: &[f32], k: u32, g: usize) -> Vec<i32> {
        let qmax = (1i32 << (k - 1)) - 1;
        let mut out = Vec::new();
        for group in x.chunks(g) {
            let s = group.iter().map(|v| v.abs()).fold(0.0f32, f32::max);
            for &v in group {
                if s == 0.0 {
                    out.push(0);
                } else {
                    let t = f64::from(v) / f64::from(s) * f64::from(qmax);
                    let r = if t >= 0.0 {
                        libm::floor(t + 0.5)
                    } else {
                        -libm::floor(-t + 0.5)
                    };
                    out.push(r as i32);
                }
            }
        }
        out
    }

    #[test]
    fn zero_group() {
        let c = quantize(&[0.0; 4], Bits::Four, 4).unwrap();
        assert_eq!(c.codes(), vec![0, 0, 0, 0]);
        assert_eq!(c.scales(), &[0.0]);
        assert_eq!(dequantize(&c).unwrap().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn worked_example() {
        let x = [0.5, -0.25, 1.0, 0.0];
        let c = quantize(&x, Bits::Four, 4).unwrap();
        assert_eq!(c.scales(), &[1.0]);
        assert_eq!(c.codes(), vec![4, -2, 7, 0]);
        let codes: Vec<i32> = c.codes().into_iter().map(i32::from).collect();
        assert_eq!(codes, reference_codes(&x, 4, 4));
        let y = dequantize(&c).unwrap();
        let want = [4.0f32 / 7.0, -2.0 / 7.0, 1.0, 0.0];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!((y[0] - 0.5714).abs() < 1e-4 && (y[1] + 0.2857).abs() < 1e-4);
    }

    #[test]
    fn endpoints_exact() {
        let c = quantize(&[7.0, -7.0], Bits::Four, 2).unwrap();
        assert_eq!(c.codes(), vec![7, -7]);
        assert_eq!(c.scales(), &[7.0]);
        assert_eq!(dequantize(&c).unwrap().as_slice(), &[7.0, -7.0]);
    }

    #[test]
    fn matches_scalar_reference() {
        for (seed, k, g) in [(1u64, 4u32, 7usize), (2, 8, 16), (3, 4, 128), (4, 8, 1)] {
            let x = fill_spiky(&mut SeededRng::new(seed), 1001, 0.02, 30.0);
            let c = quantize(&x, Bits::from_u32(k).unwrap(), g).unwrap();
            let got: Vec<i32> = c.codes().into_iter().map(i32::from).collect();
            assert_eq!(got, reference_codes(&x, k, g));
        }
    }

    #[test]
    fn short_final_group() {
        let x = fill_gaussian(&mut SeededRng::new(5), 10, 0.0, 1.0);
        let c = quantize(&x, Bits::Eight, 4).unwrap();
        assert_eq!(c.num_groups(), 3);
        assert_eq!(c.scales()[2], x[8].abs().max(x[9].abs()));
        assert_eq!(dequantize(&c).unwrap().len(), 10);
    }

    #[test]
    fn packed_sizes() {
        let c = quantize(&[1.0, 2.0, 3.0, 4.0], Bits::Four, 4).unwrap();
        assert_eq!(c.packed().len(), 2);
        let c = quantize(&[1.0, 2.0, 3.0], Bits::Four, 4).unwrap();
        assert_eq!(c.packed().len(), 2);
        let x = fill_gaussian(&mut SeededRng::new(6), 131_072, 0.0, 1.0);
        let c = quantize(&x, Bits::Four, 2048).unwrap();
        assert_eq!(c.payload_len(32), 65_536 + 64 * 4);
        assert_eq!(wire_encode(&c).len(), HEADER_LEN + 65_792);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(quantize(&[1.0], Bits::Four, 0), Err(Error::ZeroGroupSize));
        assert_eq!(
            quantize(&[1.0, f32::NAN], Bits::Four, 2),
            Err(Error::NonFinite { index: 1 })
        );
        assert_eq!(Bits::from_u32(3), Err(Error::UnsupportedBits(3)));
    }

    #[test]
    fn decode_rejects_corruption() {
        let c = quantize(&[0.5, -1.0, 0.25], Bits::Four, 2).unwrap();
        let buf = wire_encode(&c);
        assert_eq!(wire_decode(&buf).unwrap(), c);
        assert!(matches!(
            wire_decode(&buf[..buf.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            wire_decode(&buf[..5]),
            Err(Error::Truncated { .. })
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(wire_decode(&long), Err(Error::Corrupt(_))));
        let mut bad_k = buf.clone();
        bad_k[0] = 5;
        assert_eq!(wire_decode(&bad_k), Err(Error::UnsupportedBits(5)));
        let mut bad_code = buf.clone();
        bad_code[HEADER_LEN] = 0x08; // -8 is outside the symmetric range
        assert!(matches!(wire_decode(&bad_code), Err(Error::Corrupt(_))));
        let mut neg_scale = buf;
        let at = neg_scale.len() - 4;
        neg_scale[at..].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(wire_decode(&neg_scale), Err(Error::Corrupt(_))));
    }

    #[test]
    fn dequantize_rejects_bad_lengths() {
        let mut c = quantize(&[1.0, 2.0], Bits::Eight, 2).unwrap();
        c.packed.pop();
        assert!(matches!(dequantize(&c), Err(Error::Corrupt(_))));
    }
}
