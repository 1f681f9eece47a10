//! Replica-level parallelism with results kept in replica order.

use rayon::prelude::*;

use crate::error::Result;

/// Runs `f` for every replica index in `0..replicas` and returns results in
/// index order. The first error (by replica index) is returned.
pub fn map_replicas<T, F>(replicas: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let out: Vec<Result<T>> = (0..replicas).into_par_iter().map(&f).collect();
    out.into_iter().collect()
}

/// Runs `job` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return job();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn order_and_errors() {
        let v = map_replicas(50, |r| Ok(r * 2)).unwrap();
        assert_eq!(v, (0..50).map(|r| r * 2).collect::<Vec<_>>());
        let e = map_replicas(10, |r| if r >= 3 { Err(Error::EmptyTrajectory.in_replica(r, 0)) } else { Ok(r) });
        assert!(matches!(e, Err(Error::Replica { replica: 3, .. })));
        let a = with_workers(1, || map_replicas(8, Ok).unwrap());
        let b = with_workers(3, || map_replicas(8, Ok).unwrap());
        assert_eq!(a, b);
    }
}
