//! Execution policy for data-parallel loops.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over the
//! rayon pool; without it every loop runs sequentially. Results are always
//! collected by index, so the output never depends on the schedule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` inside a pool with `threads` workers (global pool when `None`).
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            return pool.install(f);
        }
        log::warn!("could not build a {n}-thread pool, using the global pool");
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    f()
}

pub fn available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(Execution::Sequential, 1000, f);
        let b = with_threads(Some(3), || map_indexed(Execution::Parallel, 1000, f));
        assert_eq!(a, b);
    }
}
