//! Data-parallel execution of independent trajectories.
//!
//! Results always come back in trajectory-index order, so any reduction done
//! by the caller over the returned vector is independent of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluate `f(0..n)` on a dedicated pool of `threads` workers (`None` uses
/// rayon's default sizing). Output index `i` holds `f(i)`.
pub fn parallel_map<T, F>(n: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .expect("thread pool construction");
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Per-trajectory results with blow-ups separated out.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome<T> {
    /// Completed trajectories as `(index, value)` in index order.
    pub completed: Vec<(usize, T)>,
    /// Aborted trajectories as `(index, blow-up time)`.
    pub aborted: Vec<(usize, f64)>,
}

impl<T> EnsembleOutcome<T> {
    pub fn abort_count(&self) -> usize {
        self.aborted.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.completed.iter().map(|(_, v)| v)
    }
}

/// Split blow-ups from successes; any other error is returned as is.
pub fn collect_outcomes<T>(results: Vec<Result<T>>) -> Result<EnsembleOutcome<T>> {
    let mut completed = Vec::with_capacity(results.len());
    let mut aborted = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => completed.push((i, v)),
            Err(Error::BlowUp { time }) => aborted.push((i, time)),
            Err(e) => return Err(e),
        }
    }
    Ok(EnsembleOutcome { completed, aborted })
}
