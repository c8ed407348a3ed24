//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper collects results in index order, so reductions performed on
//! the returned vectors are bitwise independent of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "MODEKIT_THREADS";

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Collects `Result`s produced in parallel, returning the first error by index.
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Reads [`THREADS_ENV`]. Returns `None` when unset or unparsable.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Installs the global thread pool according to [`THREADS_ENV`].
///
/// Without the `parallel` feature this is a no-op. Calling it twice is harmless;
/// the second call leaves the existing pool in place.
pub fn init_global_pool() {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads_from_env() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Number of worker threads the helpers will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
