//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan work out over rayon; without
//! it they degrade to plain loops. Every call site parallelizes only over
//! independent output slots whose inner reductions run in a fixed order, so
//! both paths produce bit-identical results. The `*_seq` variants are always
//! available for benchmarks that compare the two.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_range<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_range_seq(n, f)
    }
}

/// Sequential counterpart of [`map_range`].
pub fn map_range_seq<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Fills disjoint `chunk` sized pieces of `out`, handing `f` the chunk index
/// and its slice. `out.len()` must be a multiple of `chunk`.
pub fn fill_chunks<S: Send, F: Fn(usize, &mut [S]) + Sync + Send>(
    out: &mut [S],
    chunk: usize,
    f: F,
) {
    debug_assert_eq!(out.len() % chunk.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        fill_chunks_seq(out, chunk, f)
    }
}

/// Sequential counterpart of [`fill_chunks`].
pub fn fill_chunks_seq<S, F: Fn(usize, &mut [S])>(out: &mut [S], chunk: usize, f: F) {
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c)
    }
}
