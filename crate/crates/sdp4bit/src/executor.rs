use rayon::prelude::*;
use rayon::ThreadPool;
use sdp4bit_core::exec::Executor;

/// Fans per-rank work out over a fixed-size rayon pool. Results are
/// collected in rank order, so output does not depend on the thread count.
pub struct ThreadedExecutor {
    pool: ThreadPool,
}

impl ThreadedExecutor {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for ThreadedExecutor {
    fn map_ranks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}
