//! Thread-count control.
//!
//! `WINDCAST_THREADS` picks the worker count for data-parallel loops: unset
//! uses all cores, `0` (or `1`) runs serial. Results are bitwise identical
//! either way because every parallel map collects in input order and all
//! reductions over the collected values run serially.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Worker count requested via `WINDCAST_THREADS`; `None` means "all cores".
pub fn requested_threads() -> Option<usize> {
    std::env::var("WINDCAST_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
}

fn pool() -> &'static Option<rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let threads = requested_threads();
        match threads {
            Some(0) | Some(1) => None,
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("thread pool"),
            ),
            None => Some(rayon::ThreadPoolBuilder::new().build().expect("thread pool")),
        }
    })
}

/// Maps `f` over `0..n`, in parallel when a pool is configured.
///
/// Output order always matches input order.
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    match pool() {
        Some(p) => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    }
}
