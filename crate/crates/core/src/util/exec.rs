//! Parallel/sequential execution switch.
//!
//! With the `parallel` feature (default) the indexed maps below fan out on
//! rayon; without it they run sequentially. Both paths produce outputs in
//! index order, so callers are bit-identical either way. The `*_serial`
//! variants are always available for benchmarking the fallback against the
//! data-parallel path.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_serial(n, f)
}

/// Sequential reference implementation of [`map_indexed`].
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Sum of `f(i)` over `0..n` where `f` yields an integer count. Integer
/// addition is associative, so the parallel reduction is order-independent.
#[cfg(feature = "parallel")]
pub fn count_indexed<F>(n: usize, f: F) -> u64
where
    F: Fn(usize) -> u64 + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).sum()
}

#[cfg(not(feature = "parallel"))]
pub fn count_indexed<F>(n: usize, f: F) -> u64
where
    F: Fn(usize) -> u64 + Sync + Send,
{
    count_indexed_serial(n, f)
}

/// Sequential reference implementation of [`count_indexed`].
pub fn count_indexed_serial<F>(n: usize, f: F) -> u64
where
    F: Fn(usize) -> u64,
{
    (0..n).map(f).sum()
}

/// Configure the global rayon pool size. No-op without the `parallel`
/// feature. Returns an error string if the pool was already initialized.
#[cfg(feature = "parallel")]
pub fn configure_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_threads: usize) -> Result<(), String> {
    Ok(())
}
