//! Byte accounting for simulated collectives and a bandwidth-only time model.

use crate::error::{Error, Result};
use crate::quant::{Bits, QuantizedChunk};

/// Which physical link a message crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Intra,
    Inter,
}

/// Payload bytes and element counts moved over each link class.
///
/// Bytes exclude the chunk header; they are `⌈n·k/8⌉ + groups·scale_bits/8`
/// for a quantized message and `n·bits/8` for a raw one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteLedger {
    pub intra_bytes: u64,
    pub inter_bytes: u64,
    pub intra_elems: u64,
    pub inter_elems: u64,
}

impl ByteLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_chunk(&mut self, link: Link, chunk: &QuantizedChunk, scale_bits: u32) {
        self.record(
            link,
            chunk.payload_len(scale_bits) as u64,
            chunk.len() as u64,
        );
    }

    /// Uncompressed message of `elems` values at `bits_per_elem` each.
    pub fn record_raw(&mut self, link: Link, elems: usize, bits_per_elem: u32) {
        self.record(
            link,
            (elems as u64 * u64::from(bits_per_elem)).div_ceil(8),
            elems as u64,
        );
    }

    fn record(&mut self, link: Link, bytes: u64, elems: u64) {
        match link {
            Link::Intra => {
                self.intra_bytes += bytes;
                self.intra_elems += elems;
            }
            Link::Inter => {
                self.inter_bytes += bytes;
                self.inter_elems += elems;
            }
        }
    }

    pub fn absorb(&mut self, other: &ByteLedger) {
        self.intra_bytes += other.intra_bytes;
        self.inter_bytes += other.inter_bytes;
        self.intra_elems += other.intra_elems;
        self.inter_elems += other.inter_elems;
    }

    /// Measured bits per transmitted element on the inter-node link.
    pub fn inter_bits_per_elem(&self) -> Option<f64> {
        (self.inter_elems > 0).then(|| 8.0 * self.inter_bytes as f64 / self.inter_elems as f64)
    }

    pub fn intra_bits_per_elem(&self) -> Option<f64> {
        (self.intra_elems > 0).then(|| 8.0 * self.intra_bytes as f64 / self.intra_elems as f64)
    }
}

/// Wire cost of group-wise quantization: `k + scale_bits / G`.
pub fn comm_bits_per_param(bits: Bits, group_size: usize, scale_bits: u32) -> Result<f64> {
    if group_size == 0 {
        return Err(Error::ZeroGroupSize);
    }
    if scale_bits != 16 && scale_bits != 32 {
        return Err(Error::Config("scale_bits must be 16 or 32"));
    }
    Ok(f64::from(bits.get()) + f64::from(scale_bits) / group_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    Sequential,
    Overlapped,
}

/// Link bandwidths in bytes per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub intra: f64,
    pub inter: f64,
}

/// Seconds to move the ledger's bytes: intra and inter phases either add
/// (sequential) or fully overlap (the slower one dominates).
pub fn estimate_time(ledger: &ByteLedger, bw: Bandwidth, overlap: Overlap) -> Result<f64> {
    if !(bw.intra > 0.0 && bw.inter > 0.0) {
        return Err(Error::Config("bandwidths must be positive"));
    }
    let intra = ledger.intra_bytes as f64 / bw.intra;
    let inter = ledger.inter_bytes as f64 / bw.inter;
    Ok(match overlap {
        Overlap::Sequential => intra + inter,
        Overlap::Overlapped => intra.max(inter),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quantize;

    #[test]
    fn bits_per_param() {
        assert_eq!(comm_bits_per_param(Bits::Four, 2048, 32).unwrap(), 4.015625);
        assert_eq!(comm_bits_per_param(Bits::Four, 128, 32).unwrap(), 4.25);
        assert_eq!(comm_bits_per_param(Bits::Eight, 128, 16).unwrap(), 8.125);
        assert!((comm_bits_per_param(Bits::Four, usize::MAX, 32).unwrap() - 4.0).abs() < 1e-12);
        assert!(comm_bits_per_param(Bits::Four, 0, 32).is_err());
        assert!(comm_bits_per_param(Bits::Four, 64, 8).is_err());
    }

    #[test]
    fn monotone_in_bits_and_group() {
        for scale_bits in [16, 32] {
            let mut last = f64::INFINITY;
            for g in [1, 2, 8, 32, 128, 2048] {
                let b = comm_bits_per_param(Bits::Four, g, scale_bits).unwrap();
                assert!(b <= last);
                assert!(b < comm_bits_per_param(Bits::Eight, g, scale_bits).unwrap());
                last = b;
            }
        }
    }

    #[test]
    fn time_model() {
        let bw = Bandwidth {
            intra: 100.0,
            inter: 25.0,
        };
        let only_inter = ByteLedger {
            inter_bytes: 50,
            ..ByteLedger::default()
        };
        assert_eq!(
            estimate_time(&only_inter, bw, Overlap::Sequential).unwrap(),
            2.0
        );
        assert_eq!(
            estimate_time(&only_inter, bw, Overlap::Overlapped).unwrap(),
            2.0
        );
        let balanced = ByteLedger {
            intra_bytes: 300,
            inter_bytes: 75,
            ..ByteLedger::default()
        };
        assert_eq!(
            estimate_time(&balanced, bw, Overlap::Sequential).unwrap(),
            6.0
        );
        assert_eq!(
            estimate_time(&balanced, bw, Overlap::Overlapped).unwrap(),
            3.0
        );
        assert!(estimate_time(
            &balanced,
            Bandwidth {
                intra: 0.0,
                inter: 1.0
            },
            Overlap::Sequential
        )
        .is_err());
    }

    #[test]
    fn ledger_counts_payload() {
        let c = quantize(&[1.0; 256], Bits::Four, 128).unwrap();
        let mut l = ByteLedger::new();
        l.record_chunk(Link::Inter, &c, 32);
        assert_eq!(l.inter_bytes, 128 + 8);
        assert_eq!(l.inter_bits_per_elem(), Some(4.25));
        l.record_raw(Link::Intra, 10, 16);
        assert_eq!((l.intra_bytes, l.intra_elems), (20, 10));
        assert_eq!(l.intra_bits_per_elem(), Some(16.0));
    }
}
