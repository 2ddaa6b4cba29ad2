//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into fixed-size chunks whose contents are computed by
//! a serial loop, so the result does not depend on the thread count or on
//! whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Uses rayon when the `parallel` feature is on, otherwise sequential.
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

/// Calls `f(chunk_index, chunk)` for every `chunk`-sized piece of `data`.
pub(crate) fn for_each_chunk<T, F>(mode: Parallelism, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Maps `f` over `0..count` and returns the results in index order.
pub(crate) fn map_indices<R, F>(mode: Parallelism, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..count).into_par_iter().map(f).collect(),
        _ => (0..count).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_in_both_modes() {
        for mode in [Parallelism::Sequential, Parallelism::Rayon] {
            let mut v = vec![0usize; 103];
            for_each_chunk(mode, &mut v, 10, |i, c| {
                for x in c.iter_mut() {
                    *x = i;
                }
            });
            assert_eq!(v[0], 0);
            assert_eq!(v[102], 10);
            assert_eq!(map_indices(mode, 5, |i| i * i), vec![0, 1, 4, 9, 16]);
        }
    }
}
