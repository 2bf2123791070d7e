//! Deterministic data parallelism.
//!
//! Work is split into disjoint output chunks; each chunk is produced by one
//! closure call with a fixed internal accumulation order, so results are
//! bitwise identical regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force single-threaded kernels (used to cross-check the parallel path).
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

/// Cap the worker pool at `threads`. Has to run before any parallel work;
/// returns false if the pool was already set up (or the feature is off).
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Call `f(index, chunk)` for every `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}
