use alloc::vec::Vec;

/// Runs independent per-sample jobs. Results come back in index order, so
/// callers reduce them sequentially and stay bit-reproducible whatever the
/// degree of parallelism.
pub trait Executor: Sync {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..n).map(f).collect()
    }
}
