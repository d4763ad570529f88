use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable read by [`worker_count`].
pub const WORKERS_ENV: &str = "XMF_WORKERS";

/// Explicit request first, then `XMF_WORKERS`, then the machine's parallelism.
pub fn worker_count(requested: Option<usize>) -> Result<usize> {
    if let Some(n) = requested {
        return if n == 0 {
            Err(Error::Usage("worker count must be at least 1".into()))
        } else {
            Ok(n)
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `task(0..n)` on up to `workers` threads and returns the results in
/// index order. The first error (by index) wins.
pub fn run_indexed<T, F>(n: usize, workers: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(task).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&task).collect());
    results.into_iter().collect()
}
