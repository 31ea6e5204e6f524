//! Fan-out of independent jobs.
//!
//! Trajectories never share mutable state and each owns its RNG stream, so
//! the parallel and sequential paths produce identical results; `map`
//! preserves input order in both.

/// How independent jobs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Data-parallel over the global worker pool (sequential when the
    /// `parallel` feature is disabled).
    #[default]
    Parallel,
    /// On the calling thread.
    Sequential,
}

impl Execution {
    /// Applies `f` to every item, returning results in input order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Whether the crate was built with the data-parallel backend.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// Sizes the global worker pool. Has no effect without the `parallel`
/// feature or once the pool has been initialized.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
