use std::sync::OnceLock;

use rayon::prelude::*;

/// Worker count from `SPREADCAST_THREADS`, defaulting to every core.
pub fn worker_threads() -> usize {
    std::env::var("SPREADCAST_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(worker_threads())
            .build()
            .expect("failed to build worker pool")
    })
}

/// Order-preserving parallel map. Results come back in input order, so
/// any reduction the caller performs afterwards is deterministic.
pub(crate) fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    if worker_threads() <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    pool().install(|| items.par_iter().map(f).collect())
}
