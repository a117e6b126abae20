//! Thread-pool executor for the tile and view loops of the core crate.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};
use smoj_core::Executor;

/// Runs work items on a rayon pool. Results come back in index order, so
/// renders and fits are bit-identical to the serial executor.
#[derive(Clone, Debug, Default)]
pub struct RayonExecutor {
    pool: Option<Arc<ThreadPool>>,
}

impl RayonExecutor {
    /// Uses rayon's global pool.
    pub fn global() -> Self {
        Self::default()
    }

    /// Uses a dedicated pool with `threads` workers.
    pub fn with_threads(threads: usize) -> Result<Self, ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn threads(&self) -> usize {
        self.pool
            .as_ref()
            .map_or_else(rayon::current_num_threads, |p| p.current_num_threads())
    }
}

impl Executor for RayonExecutor {
    fn map_indexed<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let run = || (0..n).into_par_iter().map(&f).collect();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let exec = RayonExecutor::with_threads(3).unwrap();
        assert_eq!(exec.threads(), 3);
        let out = exec.map_indexed(1000, |i| i * i);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i * i));
    }
}
