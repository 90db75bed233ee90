//! Fixed-size worker pool for independent rollout jobs.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs pure jobs in parallel and returns results in input order, so the
/// outcome never depends on the worker count or completion order.
#[derive(Debug)]
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    /// `workers == 0` uses every available core.
    pub fn new(workers: usize) -> Result<Self> {
        let workers = if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Other(format!("cannot start worker pool: {e}")))?;
        Ok(WorkerPool { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.workers == 1 {
            return items.iter().map(f).collect();
        }
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let items: Vec<u64> = (0..200).collect();
        let f = |x: &u64| (0..*x % 17).fold(*x, |a, k| a.wrapping_mul(31).wrapping_add(k));
        let one = WorkerPool::new(1).unwrap().map(&items, f);
        let four = WorkerPool::new(4).unwrap().map(&items, f);
        assert_eq!(one, four);
    }
}
