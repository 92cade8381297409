//! Thin wrappers around the data-parallel runtime.
//!
//! With the default `parallel` feature these dispatch to rayon; without it
//! they degrade to plain sequential loops so the whole workspace builds and
//! runs single-threaded. Results are always produced in index order, so
//! callers that reduce over the output get identical floating-point results
//! regardless of thread count.

use std::sync::OnceLock;

/// Caps the global thread pool from `DPTOMO_THREADS` (first call wins).
///
/// Invalid or absent values leave the default pool untouched. Without the
/// `parallel` feature this only records the request. Returns the cap, if any.
pub fn init_threads_from_env() -> Option<usize> {
    static CAP: OnceLock<Option<usize>> = OnceLock::new();
    *CAP.get_or_init(|| {
        let n: usize = std::env::var("DPTOMO_THREADS").ok()?.trim().parse().ok()?;
        if n == 0 {
            return None;
        }
        #[cfg(feature = "parallel")]
        {
            // Fails if a global pool already exists; the cap still applied if
            // we got here first, which is all the CLI needs.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Some(n)
    })
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_ordered<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f(i, item)` for every item, each item touched exactly once.
///
/// Items typically are disjoint mutable views, so parallel execution cannot
/// race and the outcome is independent of scheduling.
pub fn for_each_indexed<T, F>(items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(usize, T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, t) in items.into_iter().enumerate() {
            f(i, t);
        }
    }
}
