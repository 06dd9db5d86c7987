//! Per-rank fan-out.
//!
//! Work handed to an [`Executor`] is indexed by rank and must be a pure
//! function of that index; results come back in rank order, so any
//! scheduling produces identical output.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map_ranks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs ranks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_ranks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
