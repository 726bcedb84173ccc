//! Data-parallel map helpers.
//!
//! With the `parallel` feature (default) these run on the rayon global pool;
//! without it they fall back to plain sequential iteration. Results are
//! always returned in input order, so callers get identical output
//! regardless of worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, preserving element order.
#[cfg(feature = "parallel")]
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Number of workers the helpers above will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
