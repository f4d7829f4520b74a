//! Seeded random streams.
//!
//! Every simulation draws from a ChaCha8 generator. A run is identified by a
//! master seed and a replication index: the key is derived from the master
//! seed with `seed_from_u64` and the replication index selects the ChaCha
//! stream. Replication `k` therefore produces the same numbers regardless of
//! how many replications run or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn stream(seed: u64, replication: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Runs `f(0), …, f(count − 1)` on scoped worker threads and returns the
/// results ordered by replication index, so the outcome does not depend on
/// the number of threads.
pub fn replicate<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count.max(1) as usize);
    if workers <= 1 {
        return (0..count).map(&f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = slots.chunks_mut(count.div_ceil(workers as u64) as usize).collect();
        let mut start = 0u64;
        for chunk in chunks {
            let f = &f;
            let first = start;
            start += chunk.len() as u64;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(first + k as u64));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every replication ran")).collect()
}
