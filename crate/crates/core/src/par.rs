//! Replica fan-out.
//!
//! All Monte Carlo batches go through [`map_replicas`]. With the `parallel`
//! feature it runs on the current rayon pool, otherwise on the calling
//! thread. Results always come back in replica order, and every replica
//! derives its randomness from its own index, so the output is identical
//! for any worker count.

/// Runs `f(0..reps)` sequentially.
pub fn map_replicas_sequential<T, F>(reps: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..reps).map(f).collect()
}

/// Runs `f(0..reps)` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_replicas_parallel<T, F>(reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..reps).into_par_iter().map(f).collect()
}

/// Default fan-out: parallel when the feature is on.
#[cfg(feature = "parallel")]
pub fn map_replicas<T, F>(reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_replicas_parallel(reps, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicas<T, F>(reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_replicas_sequential(reps, f)
}

/// Runs `op` inside a pool of exactly `workers` threads. Without the
/// `parallel` feature this just calls `op`.
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(op),
            Err(_) => op(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        op()
    }
}
