//! Single-process simulation of the collectives used by sharded data
//! parallelism: reduce-scatter (exact, per-hop-quantized ring, two-level
//! all-to-all with optional Hadamard smoothing) and all-gather.

mod gather;
mod reduce;
mod topology;

pub use gather::{all_gather, all_gather_raw};
pub use reduce::{
    exact_reduce_scatter, naive_tlqhs_reduce, pad_to, reduce_scatter, ring_reduce_scatter,
    two_level_reduce_scatter, unshard, ReduceConfig, ReduceMode,
};
pub use topology::ClusterTopology;
