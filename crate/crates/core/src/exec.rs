//! Pluggable execution of independent work items.
//!
//! The rasterizer and the fitter split their work into independent items
//! (image tiles, camera views) and hand them to an [`Executor`]. Results
//! always come back in item order and are reduced in that order, so output
//! is bit-identical whatever the executor's degree of parallelism.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(0), …, f(n − 1)` and returns the results in index order.
    fn map_indexed<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs every item on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map_indexed<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
