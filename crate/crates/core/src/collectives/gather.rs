use alloc::vec::Vec;

use super::topology::ClusterTopology;
use crate::costmodel::ByteLedger;
use crate::error::{Error, Result};
use crate::quant::{dequantize, QuantizedChunk};
use crate::tensor::FlatTensor;

/// Every rank receives all `P` chunks, dequantizes them and concatenates in
/// rank order. Each delivery to another rank is charged to the link it
/// crosses.
pub fn all_gather(
    topo: &ClusterTopology,
    chunks: &[QuantizedChunk],
    scale_bits: u32,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    if chunks.len() != topo.workers() {
        return Err(Error::LengthMismatch {
            expected: topo.workers(),
            got: chunks.len(),
        });
    }
    let decoded: Vec<FlatTensor> = chunks.iter().map(dequantize).collect::<Result<_>>()?;
    deliver(topo, ledger, |ledger, src, dst| {
        ledger.record_chunk(topo.link(src, dst), &chunks[src], scale_bits)
    });
    Ok(assemble(topo, &decoded))
}

/// Lossless all-gather of raw shards, charged at `bits_per_elem`.
pub fn all_gather_raw(
    topo: &ClusterTopology,
    shards: &[FlatTensor],
    bits_per_elem: u32,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    if shards.len() != topo.workers() {
        return Err(Error::LengthMismatch {
            expected: topo.workers(),
            got: shards.len(),
        });
    }
    deliver(topo, ledger, |ledger, src, dst| {
        ledger.record_raw(topo.link(src, dst), shards[src].len(), bits_per_elem)
    });
    Ok(assemble(topo, shards))
}

fn deliver(
    topo: &ClusterTopology,
    ledger: &mut ByteLedger,
    mut charge: impl FnMut(&mut ByteLedger, usize, usize),
) {
    for dst in 0..topo.workers() {
        for src in (0..topo.workers()).filter(|&src| src != dst) {
            charge(ledger, src, dst);
        }
    }
}

fn assemble(topo: &ClusterTopology, parts: &[FlatTensor]) -> Vec<FlatTensor> {
    // Each rank concatenates the same buffers in the same order.
    (0..topo.workers())
        .map(|_| {
            FlatTensor::from_vec_unchecked(parts.iter().flat_map(|p| p.iter().copied()).collect())
        })
        .collect()
}
