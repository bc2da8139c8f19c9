// SPDX-License-Identifier: Apache-2.0

use rayon::prelude::*;

use crate::error::Result;

/// Map `f` over `items` on `jobs` worker threads, preserving input order.
/// `jobs <= 1` runs inline on the calling thread.
pub fn try_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::Error::Backend(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}
