//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] dispatches to rayon;
//! without it every path runs on the calling thread. Reductions are always
//! folded in a fixed chunk order so results are bit-identical regardless of
//! the thread count.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Evaluates `f(i)` for `i in 0..len`, preserving order.
pub fn map_indices<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Splits `0..len` into fixed-size chunks, evaluates `partial` on each chunk
/// (possibly in parallel) and folds the partials left to right with `merge`.
pub fn chunked_fold<T, P, M>(exec: Exec, len: usize, chunk: usize, partial: P, mut merge: M) -> Option<T>
where
    T: Send,
    P: Fn(Range<usize>) -> T + Sync + Send,
    M: FnMut(&mut T, T),
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let partials = map_indices(exec, n_chunks, |c| {
        let start = c * chunk;
        partial(start..(start + chunk).min(len))
    });
    let mut it = partials.into_iter();
    let mut acc = it.next()?;
    for p in it {
        merge(&mut acc, p);
    }
    Some(acc)
}

/// Chunk size used by batch reductions.
pub const REDUCE_CHUNK: usize = 16;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let v = map_indices(exec, 100, |i| i * 2);
            assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fold_is_order_stable() {
        let f = |r: Range<usize>| r.map(|i| (i as f64).sqrt()).sum::<f64>();
        let a = chunked_fold(Exec::Sequential, 1000, 7, f, |a, b| *a += b).unwrap();
        let b = chunked_fold(Exec::Parallel, 1000, 7, f, |a, b| *a += b).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(chunked_fold(Exec::Parallel, 0, 7, f, |a, b| *a += b).is_none());
    }
}
