//! Execution policy for the data-parallel loops.
//!
//! Every parallel loop in the crate is an indexed map whose items are
//! computed independently and collected in index order, so the output never
//! depends on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parallelism {
    Sequential,
    /// Rayon pool; `None` uses the global pool, `Some(n)` a dedicated pool of `n` workers.
    Parallel(Option<usize>),
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel(None)
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn with_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(1) => Parallelism::Sequential,
            other => Parallelism::Parallel(other),
        }
    }

    /// `true` when work will actually be spread over threads.
    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Parallelism::Parallel(_))
    }

    /// Evaluates `f(0), ..., f(n - 1)` and returns the results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Parallel(jobs) => par_map(*jobs, n, f),
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(jobs: Option<usize>, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    match jobs {
        None => (0..n).into_par_iter().map(f).collect(),
        Some(k) => match rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            // pool creation only fails on thread spawn errors
            Err(_) => (0..n).map(f).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_index_order() {
        for par in [
            Parallelism::Sequential,
            Parallelism::Parallel(None),
            Parallelism::Parallel(Some(3)),
        ] {
            let out = par.map(100, |i| i * i);
            assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_job_is_sequential() {
        assert_eq!(Parallelism::with_jobs(Some(1)), Parallelism::Sequential);
    }
}
