//! Seed-deterministic parallel execution.
//!
//! Work unit `i` always receives `SimRng::derive_child(seed, i)` and results
//! come back in index order, so output is identical for any worker count.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{invalid, Result};
use crate::rng::SimRng;

/// Default chunk length for per-draw Monte-Carlo loops.
pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Clone)]
pub struct Runner {
    pool: Arc<ThreadPool>,
    workers: usize,
}

impl std::fmt::Debug for Runner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runner").field("workers", &self.workers).finish()
    }
}

impl Runner {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(invalid("worker count must be positive"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
        Ok(Self {
            pool: Arc::new(pool),
            workers,
        })
    }

    /// One worker per available core.
    pub fn with_available_cores() -> Self {
        let n = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        Self::new(n).expect("positive worker count")
    }

    pub fn serial() -> Self {
        Self::new(1).expect("positive worker count")
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f(i, rng_i)` for `i in 0..count`; results in index order.
    pub fn map_trials<T, F>(&self, count: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &mut SimRng) -> T + Sync,
    {
        self.pool.install(|| {
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = SimRng::derive_child(seed, i as u64);
                    f(i, &mut rng)
                })
                .collect()
        })
    }

    /// Like [`map_trials`](Self::map_trials) for fallible work; the first
    /// error in index order is returned.
    pub fn try_map_trials<T, F>(&self, count: usize, seed: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut SimRng) -> Result<T> + Sync,
    {
        self.map_trials(count, seed, f).into_iter().collect()
    }

    /// Produces `total` draws in fixed-size chunks. `f(rng, len)` must return
    /// exactly `len` values; chunk `c` uses child stream `c`.
    pub fn draws<F>(&self, total: usize, seed: u64, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&mut SimRng, usize) -> Result<Vec<f64>> + Sync,
    {
        let chunks = total.div_ceil(DEFAULT_CHUNK);
        let parts = self.try_map_trials(chunks, seed, |c, rng| {
            let len = DEFAULT_CHUNK.min(total - c * DEFAULT_CHUNK);
            f(rng, len)
        })?;
        Ok(parts.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn worker_count_does_not_change_results() {
        let f = |i: usize, rng: &mut SimRng| (i, rng.next_u64());
        let a = Runner::new(1).unwrap().map_trials(100, 9, f);
        let b = Runner::new(4).unwrap().map_trials(100, 9, f);
        assert_eq!(a, b);
        let g = |rng: &mut SimRng, len: usize| Ok((0..len).map(|_| rng.uniform()).collect());
        let x = Runner::new(1).unwrap().draws(10_000, 3, g).unwrap();
        let y = Runner::new(3).unwrap().draws(10_000, 3, g).unwrap();
        assert_eq!(x.len(), 10_000);
        assert_eq!(x, y);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Runner::new(0).is_err());
    }
}
