//! Data-parallel execution helpers.
//!
//! Every hot loop in the crate (per-sample convolution work, per-image
//! dataset preprocessing, per-leaf generation, per-image scoring) goes
//! through `map_indexed`. With the default `parallel` feature it fans out
//! over a rayon pool; without it the same closure runs sequentially. Output
//! order is by index in both cases, so results are identical across the two
//! backends and across runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential reference path. Always compiled so benchmarks can compare
/// against the parallel backend within one build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map over a slice in index order.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// True when this build dispatches work onto a rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Human-readable name of the active backend, for logs and benchmarks.
pub const fn mode_name() -> &'static str {
    if is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let par = map_indexed(100, |i| i * i);
        let seq = map_indexed_seq(100, |i| i * i);
        assert_eq!(par, seq);
    }
}
