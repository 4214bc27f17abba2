//! Order-preserving data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature a [`Pool`] runs work on a rayon thread pool;
//! without it (or with `Pool::sequential()`) everything runs on the calling
//! thread. Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Pool {
    #[cfg(feature = "parallel")]
    inner: Option<rayon::ThreadPool>,
}

impl Pool {
    /// Pool with `threads` workers. `0` means one per available core; `1`
    /// runs sequentially.
    pub fn new(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if threads == 1 {
                return Self::sequential();
            }
            let inner = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| log::warn!("falling back to sequential execution: {e}"))
                .ok();
            Self { inner }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self {}
        }
    }

    pub fn sequential() -> Self {
        Self {
            #[cfg(feature = "parallel")]
            inner: None,
        }
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.inner.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.inner {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

impl Default for Pool {
    fn default() -> Self {
        Self::new(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Pool::sequential().map(&items, |x| x * x);
        let par = Pool::new(4).map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 998001);
    }

    #[test]
    fn single_thread_is_sequential() {
        assert!(!Pool::new(1).is_parallel());
    }
}
