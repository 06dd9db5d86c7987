//! Reduce-scatter strategies.
//!
//! Every strategy takes `P` equal-length gradients and returns `P` shards,
//! shard `p` being the element-wise mean of slice `p` over all workers.
//! Reductions accumulate through [`ExactSum`] and round once, then divide by
//! `P`. A lossless hop forwards the exact accumulator instead of a rounded
//! vector, so every strategy with lossless hops is bit-identical to
//! [`exact_reduce_scatter`].

use alloc::vec::Vec;

use super::topology::ClusterTopology;
use crate::costmodel::{ByteLedger, Link};
use crate::error::{Error, Result};
use crate::hadamard::{fwht_f64_in_place, fwht_in_place, HadamardConfig};
use crate::quant::{dequantize, quantize, Bits, QuantizedChunk};
use crate::sum::ExactSum;
use crate::tensor::FlatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Exact,
    RingQuantized,
    TwoLevel,
}

/// Gradient reduce-scatter configuration.
///
/// `None` bit-widths mean a lossless hop. In ring mode intra-node hops use
/// `intra_bits` and inter-node hops use `inter_bits`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReduceConfig {
    pub mode: ReduceMode,
    pub intra_bits: Option<Bits>,
    pub inter_bits: Option<Bits>,
    pub group_size: usize,
    pub hadamard: Option<HadamardConfig>,
    /// Scale width charged to the ledger per group.
    pub scale_bits: u32,
    /// Bits per element charged to the ledger for lossless messages.
    pub raw_bits: u32,
}

impl ReduceConfig {
    fn two_level(
        intra: Option<Bits>,
        inter: Option<Bits>,
        group_size: usize,
        hadamard: Option<HadamardConfig>,
    ) -> Self {
        Self {
            mode: ReduceMode::TwoLevel,
            intra_bits: intra,
            inter_bits: inter,
            group_size,
            hadamard,
            scale_bits: 32,
            raw_bits: 32,
        }
    }

    pub fn exact() -> Self {
        Self {
            mode: ReduceMode::Exact,
            ..Self::two_level(None, None, 1, None)
        }
    }

    /// Two all-to-all passes without compression.
    pub fn lossless_two_level() -> Self {
        Self::two_level(None, None, 1, None)
    }

    /// Uniform 4-bit quantization on both all-to-all passes.
    pub fn ulq(group_size: usize) -> Self {
        Self::two_level(Some(Bits::Four), Some(Bits::Four), group_size, None)
    }

    /// 8-bit intra-node, 4-bit inter-node.
    pub fn tlq(group_size: usize) -> Self {
        Self::two_level(Some(Bits::Eight), Some(Bits::Four), group_size, None)
    }

    /// [`ReduceConfig::tlq`] with Hadamard smoothing of block `block`.
    pub fn tlq_hs(group_size: usize, block: usize) -> Result<Self> {
        let cfg = Self::two_level(
            Some(Bits::Eight),
            Some(Bits::Four),
            group_size,
            Some(HadamardConfig::new(block)?),
        );
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ring reduce-scatter quantizing every hop to `bits` (`None`: lossless).
    pub fn ring(bits: Option<Bits>, group_size: usize) -> Self {
        Self {
            mode: ReduceMode::RingQuantized,
            ..Self::two_level(bits, bits, group_size, None)
        }
    }

    pub fn with_scale_bits(mut self, scale_bits: u32) -> Self {
        self.scale_bits = scale_bits;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::ZeroGroupSize);
        }
        if let Some(h) = self.hadamard {
            if !self.group_size.is_multiple_of(h.block()) && self.is_lossy() {
                return Err(Error::Config(
                    "group size must be divisible by the hadamard block",
                ));
            }
            if self.mode != ReduceMode::TwoLevel {
                return Err(Error::Config(
                    "hadamard smoothing applies to two-level mode only",
                ));
            }
        }
        Ok(())
    }

    pub fn is_lossy(&self) -> bool {
        self.mode != ReduceMode::Exact && (self.intra_bits.is_some() || self.inter_bits.is_some())
    }

    /// Gradient length must be a multiple of this so shards align with
    /// quantization groups and Hadamard blocks.
    pub fn alignment(&self, topo: &ClusterTopology) -> usize {
        let mut unit = if self.is_lossy() { self.group_size } else { 1 };
        if let Some(h) = self.hadamard {
            unit = lcm(unit, h.block());
        }
        topo.workers() * unit
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Zero-pads `x` up to a multiple of `multiple`.
pub fn pad_to(x: &[f32], multiple: usize) -> FlatTensor {
    let mut v = x.to_vec();
    v.resize(x.len().div_ceil(multiple) * multiple, 0.0);
    FlatTensor::from_vec_unchecked(v)
}

/// Concatenates shards and strips padding beyond `len`.
pub fn unshard(shards: &[FlatTensor], len: usize) -> FlatTensor {
    let mut v: Vec<f32> = shards.iter().flat_map(|s| s.iter().copied()).collect();
    v.truncate(len);
    FlatTensor::from_vec_unchecked(v)
}

fn check_inputs(topo: &ClusterTopology, grads: &[FlatTensor], multiple: usize) -> Result<usize> {
    if grads.len() != topo.workers() {
        return Err(Error::LengthMismatch {
            expected: topo.workers(),
            got: grads.len(),
        });
    }
    let d = grads[0].len();
    if let Some(g) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::LengthMismatch {
            expected: d,
            got: g.len(),
        });
    }
    if !d.is_multiple_of(multiple) {
        return Err(Error::Misaligned { len: d, multiple });
    }
    Ok(d / topo.workers())
}

/// What travels on one hop.
enum Message {
    Exact(ExactSum),
    Quantized(QuantizedChunk),
}

struct Wire<'a> {
    group_size: usize,
    scale_bits: u32,
    raw_bits: u32,
    ledger: &'a mut ByteLedger,
}

impl Wire<'_> {
    /// Encodes `values` (or the exact accumulator, for lossless hops) and
    /// charges the ledger when the hop crosses a link.
    fn send(
        &mut self,
        values: Source<'_>,
        bits: Option<Bits>,
        link: Option<Link>,
    ) -> Result<Message> {
        let msg = match bits {
            None => Message::Exact(match values {
                Source::Values(v) => ExactSum::from_values(v),
                Source::Sum(acc) => acc.clone(),
            }),
            Some(bits) => {
                let rounded;
                let v = match values {
                    Source::Values(v) => v,
                    Source::Sum(acc) => {
                        rounded = acc.round();
                        &rounded[..]
                    }
                };
                Message::Quantized(quantize(v, bits, self.group_size)?)
            }
        };
        if let Some(link) = link {
            match &msg {
                Message::Exact(acc) => self.ledger.record_raw(link, acc.len(), self.raw_bits),
                Message::Quantized(c) => self.ledger.record_chunk(link, c, self.scale_bits),
            }
        }
        Ok(msg)
    }
}

enum Source<'a> {
    Values(&'a [f32]),
    Sum(&'a ExactSum),
}

fn receive(acc: &mut ExactSum, msg: &Message) -> Result<()> {
    match msg {
        Message::Exact(other) => acc.merge(other),
        Message::Quantized(c) => acc.add(&dequantize(c)?),
    }
    Ok(())
}

fn decode(msg: &Message) -> Result<Vec<f32>> {
    match msg {
        Message::Exact(acc) => Ok(acc.round()),
        Message::Quantized(c) => Ok(dequantize(c)?.into_vec()),
    }
}

fn finish(acc: &ExactSum, workers: usize) -> Result<FlatTensor> {
    FlatTensor::new(acc.round_div(workers))
}

/// Reference reduce-scatter: exact sum over all workers, rounded once,
/// divided by `P`. Requires `d` divisible by `P`.
pub fn exact_reduce_scatter(
    topo: &ClusterTopology,
    grads: &[FlatTensor],
) -> Result<Vec<FlatTensor>> {
    let s = check_inputs(topo, grads, topo.workers())?;
    (0..topo.workers())
        .map(|p| {
            let mut acc = ExactSum::new(s);
            for g in grads {
                acc.add(&g[p * s..(p + 1) * s]);
            }
            finish(&acc, topo.workers())
        })
        .collect()
}

/// Ring reduce-scatter over ranks `0 → 1 → … → P-1 → 0`.
///
/// The chain for shard `c` starts at rank `c + 1` and ends at rank `c` after
/// `P - 1` hops. Each sender encodes its running partial sum; the receiver
/// decodes it and adds its own slice.
pub fn ring_reduce_scatter(
    topo: &ClusterTopology,
    grads: &[FlatTensor],
    cfg: &ReduceConfig,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    cfg.validate()?;
    let p_count = topo.workers();
    let s = check_inputs(topo, grads, cfg.alignment(topo))?;
    let mut wire = Wire {
        group_size: cfg.group_size,
        scale_bits: cfg.scale_bits,
        raw_bits: cfg.raw_bits,
        ledger,
    };
    let slice = |rank: usize, c: usize| &grads[rank][c * s..(c + 1) * s];
    (0..p_count)
        .map(|c| {
            let first = (c + 1) % p_count;
            let mut partial = ExactSum::from_values(slice(first, c));
            for t in 0..p_count - 1 {
                let sender = (c + 1 + t) % p_count;
                let receiver = (c + 2 + t) % p_count;
                let link = topo.link(sender, receiver);
                let bits = match link {
                    Link::Intra => cfg.intra_bits,
                    Link::Inter => cfg.inter_bits,
                };
                let msg = wire.send(Source::Sum(&partial), bits, Some(link))?;
                let mut acc = ExactSum::new(s);
                receive(&mut acc, &msg)?;
                acc.add(slice(receiver, c));
                partial = acc;
            }
            finish(&partial, p_count)
        })
        .collect()
}

/// Shards addressed to local rank `local`, in node order: global ranks
/// `m * N + local` for `m = 0..M`.
fn routed_shards(topo: &ClusterTopology, local: usize) -> impl Iterator<Item = usize> + '_ {
    (0..topo.nodes()).map(move |m| topo.rank(m, local))
}

/// Two all-to-all passes: intra-node exchange and reduction, then
/// inter-node exchange among workers with the same local rank.
///
/// With Hadamard smoothing the transform is applied once to each worker's
/// full gradient and once to each reduced shard at the end; the paired
/// inverse/forward transforms around the intra-node reduction cancel.
pub fn two_level_reduce_scatter(
    topo: &ClusterTopology,
    grads: &[FlatTensor],
    cfg: &ReduceConfig,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    cfg.validate()?;
    let s = check_inputs(topo, grads, cfg.alignment(topo))?;
    let (n_local, n_nodes, p_count) = (topo.per_node(), topo.nodes(), topo.workers());
    let mut wire = Wire {
        group_size: cfg.group_size,
        scale_bits: cfg.scale_bits,
        raw_bits: cfg.raw_bits,
        ledger,
    };

    let smoothed: Vec<Vec<f32>> = grads
        .iter()
        .map(|g| {
            let mut v = g.as_slice().to_vec();
            if let Some(h) = cfg.hadamard {
                fwht_in_place(&mut v, h)?;
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;

    // Intra-node all-to-all. reduced[r][m'] is worker r's node-local sum of
    // the shard owned by global rank m' * N + local(r).
    let mut reduced: Vec<Vec<ExactSum>> = Vec::with_capacity(p_count);
    for r in 0..p_count {
        let (m, l_dst) = topo.locate(r);
        let mut accs: Vec<ExactSum> = (0..n_nodes).map(|_| ExactSum::new(s)).collect();
        for l_src in 0..n_local {
            let src = topo.rank(m, l_src);
            let link = (src != r).then_some(Link::Intra);
            for (acc, shard) in accs.iter_mut().zip(routed_shards(topo, l_dst)) {
                let msg = wire.send(
                    Source::Values(&smoothed[src][shard * s..(shard + 1) * s]),
                    cfg.intra_bits,
                    link,
                )?;
                receive(acc, &msg)?;
            }
        }
        reduced.push(accs);
    }

    // Inter-node all-to-all among equal local ranks.
    (0..p_count)
        .map(|dst| {
            let (m_dst, l) = topo.locate(dst);
            let mut acc = ExactSum::new(s);
            for m_src in 0..n_nodes {
                let src = topo.rank(m_src, l);
                let link = (src != dst).then_some(Link::Inter);
                let msg = wire.send(Source::Sum(&reduced[src][m_dst]), cfg.inter_bits, link)?;
                receive(&mut acc, &msg)?;
            }
            let mut out = acc.round_div(p_count);
            if let Some(h) = cfg.hadamard {
                fwht_in_place(&mut out, h)?;
            }
            FlatTensor::new(out)
        })
        .collect()
}

/// Two-level reduction with all four Hadamard transforms applied: after the
/// intra-node dequantization, before the inter-node quantization, and after
/// the inter-node dequantization. Reference for the pruned path.
///
/// Transforms and reductions between quantizers run in `f64` so that the
/// paired transforms cancel to well below `f32` resolution; the quantizers
/// then see the same inputs as in the pruned path.
pub fn naive_tlqhs_reduce(
    topo: &ClusterTopology,
    grads: &[FlatTensor],
    cfg: &ReduceConfig,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    let Some(h) = cfg.hadamard else {
        return two_level_reduce_scatter(topo, grads, cfg, ledger);
    };
    cfg.validate()?;
    let s = check_inputs(topo, grads, cfg.alignment(topo))?;
    let (n_local, n_nodes, p_count) = (topo.per_node(), topo.nodes(), topo.workers());
    let mut wire = Wire {
        group_size: cfg.group_size,
        scale_bits: cfg.scale_bits,
        raw_bits: cfg.raw_bits,
        ledger,
    };

    let smoothed: Vec<Vec<f32>> = grads
        .iter()
        .map(|g| {
            let mut v = g.as_slice().to_vec();
            fwht_in_place(&mut v, h)?;
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let inverse_into = |acc: &mut [f64], values: &[f32]| -> Result<()> {
        let mut buf: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        fwht_f64_in_place(&mut buf, h)?;
        for (a, b) in acc.iter_mut().zip(buf) {
            *a += b;
        }
        Ok(())
    };

    // pre_inter[r][m'] is the inter-node input for shard m' * N + local(r),
    // already transformed back into the smoothed domain.
    let mut pre_inter: Vec<Vec<Vec<f32>>> = Vec::with_capacity(p_count);
    for r in 0..p_count {
        let (m, l_dst) = topo.locate(r);
        let mut sums = alloc::vec![alloc::vec![0.0f64; s]; n_nodes];
        for l_src in 0..n_local {
            let src = topo.rank(m, l_src);
            let link = (src != r).then_some(Link::Intra);
            for (sum, shard) in sums.iter_mut().zip(routed_shards(topo, l_dst)) {
                let msg = wire.send(
                    Source::Values(&smoothed[src][shard * s..(shard + 1) * s]),
                    cfg.intra_bits,
                    link,
                )?;
                inverse_into(sum, &decode(&msg)?)?;
            }
        }
        let forward = sums
            .into_iter()
            .map(|mut sum| {
                fwht_f64_in_place(&mut sum, h)?;
                Ok(sum.into_iter().map(|v| v as f32).collect())
            })
            .collect::<Result<_>>()?;
        pre_inter.push(forward);
    }

    (0..p_count)
        .map(|dst| {
            let (m_dst, l) = topo.locate(dst);
            let mut sum = alloc::vec![0.0f64; s];
            for m_src in 0..n_nodes {
                let src = topo.rank(m_src, l);
                let link = (src != dst).then_some(Link::Inter);
                let msg =
                    wire.send(Source::Values(&pre_inter[src][m_dst]), cfg.inter_bits, link)?;
                inverse_into(&mut sum, &decode(&msg)?)?;
            }
            FlatTensor::new(
                sum.into_iter()
                    .map(|v| (v / p_count as f64) as f32)
                    .collect(),
            )
        })
        .collect()
}

/// Dispatches on `cfg.mode`. `Exact` records nothing in the ledger.
pub fn reduce_scatter(
    topo: &ClusterTopology,
    grads: &[FlatTensor],
    cfg: &ReduceConfig,
    ledger: &mut ByteLedger,
) -> Result<Vec<FlatTensor>> {
    match cfg.mode {
        ReduceMode::Exact => exact_reduce_scatter(topo, grads),
        ReduceMode::RingQuantized => ring_reduce_scatter(topo, grads, cfg, ledger),
        ReduceMode::TwoLevel => two_level_reduce_scatter(topo, grads, cfg, ledger),
    }
}
