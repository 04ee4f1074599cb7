//! Order-preserving parallel map over indices.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Worker count from `PEPR_NUM_WORKERS`, defaulting to the available cores.
pub fn default_workers() -> usize {
    std::env::var("PEPR_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `f(0), ..., f(n-1)` on up to `workers` threads; results keep index order.
pub fn map_indexed<R, F>(n: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}
