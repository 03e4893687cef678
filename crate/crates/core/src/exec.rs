//! Execution helpers behind the `parallel` feature.
//!
//! Every reduction routed through here is either an ordered map (results
//! collected by index) or a merge of integer tallies, which is associative and
//! commutative. Parallel and sequential builds therefore produce bit-identical
//! results; tests assert this on the hot paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cells per work block for tally reductions.
pub(crate) const BLOCK: usize = 8192;

/// Ordered map over `0..n`, one result per index.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`], kept unconditionally for benchmarks and
/// equivalence tests.
pub(crate) fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Block-wise fold over `0..len` merged with `merge`. `merge` must be
/// associative and commutative (integer tallies are).
pub(crate) fn fold_blocks<A, F, M, Z>(len: usize, zero: Z, f: F, merge: M) -> A
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
    Z: Fn() -> A + Sync + Send,
{
    let nblocks = len.div_ceil(BLOCK).max(1);
    #[cfg(feature = "parallel")]
    {
        (0..nblocks)
            .into_par_iter()
            .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(len)))
            .reduce(&zero, &merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..nblocks)
            .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(len)))
            .fold(zero(), &merge)
    }
}

pub(crate) fn fold_blocks_seq<A, F, M, Z>(len: usize, zero: Z, f: F, merge: M) -> A
where
    F: Fn(std::ops::Range<usize>) -> A,
    M: Fn(A, A) -> A,
    Z: Fn() -> A,
{
    let nblocks = len.div_ceil(BLOCK).max(1);
    (0..nblocks)
        .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(len)))
        .fold(zero(), &merge)
}
