//! Communication compression for sharded data parallelism, simulated on a
//! single process.
//!
//! The crate is `no_std` with `alloc`. It covers group-wise integer
//! quantization, blockwise Hadamard smoothing, compressor abstractions,
//! simulated reduce-scatter / all-gather collectives over a two-level cluster
//! topology, and the compressed-SGD training loops built on them.

#![no_std]

extern crate alloc;

pub mod collectives;
pub mod compressors;
pub mod costmodel;
pub mod error;
pub mod exec;
pub mod hadamard;
pub mod quant;
pub mod rng;
pub mod sum;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::FlatTensor;
