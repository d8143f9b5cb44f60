//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) maps and reductions fan out over the
//! rayon pool. Without it, or when [`set_sequential`] is on, the same code
//! runs on the calling thread. Reductions always split the input into
//! fixed-size chunks and combine chunk results with a pairwise tree in index
//! order, so floating-point sums are bit-identical regardless of thread count
//! or execution mode.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

/// Items per reduction chunk. Part of the numerical contract: changing it
/// changes the rounding of every reduced sum.
pub const REDUCE_CHUNK: usize = 512;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces all helpers onto the calling thread. Used by the benchmarks to
/// compare both execution paths inside one binary.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Order-preserving map over `0..n`.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Order-preserving map over a slice.
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Deterministic chunked reduction over `0..n`.
///
/// `chunk` folds one index range into a partial result; `combine` merges two
/// partials. Returns `None` for `n == 0`.
pub fn reduce_chunks<T, F, C>(n: usize, chunk: F, combine: C) -> Option<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
    C: Fn(T, T) -> T,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_range(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        chunk(start..(start + REDUCE_CHUNK).min(n))
    });
    tree_reduce(partials, &combine)
}

fn tree_reduce<T, C: Fn(T, T) -> T>(mut level: Vec<T>, combine: &C) -> Option<T> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop()
}

/// Runs `f` inside a dedicated pool of `threads` workers. `None` uses the
/// global pool. Without the `parallel` feature this just calls `f`.
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
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_pairs_in_order() {
        let v: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let out = tree_reduce(v, &|a: String, b: String| format!("({a}{b})")).unwrap();
        assert_eq!(out, "(((01)(23))4)");
    }

    #[test]
    fn reduce_empty_is_none() {
        assert!(reduce_chunks(0, |r| r.len(), |a, b| a + b).is_none());
    }

    #[test]
    fn reduce_is_mode_independent() {
        let f = |r: Range<usize>| r.map(|i| (i as f64 * 0.1).sin()).sum::<f64>();
        let a = reduce_chunks(10_000, f, |a, b| a + b).unwrap();
        let b = with_threads(Some(3), || reduce_chunks(10_000, f, |a, b| a + b).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map_range(1000, |i| i * 2)[999], 1998);
        assert_eq!(map_slice(&[1, 2, 3], |x| x + 1), vec![2, 3, 4]);
    }
}
