//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the indexed maps fan out over the
//! rayon pool; without it they run sequentially with identical results.
//! Outputs are always collected in index order and reductions happen
//! sequentially at the call site, so results are bitwise identical across
//! thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to every index in `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference implementation, kept unconditionally compiled so the
/// bench suite can compare the two paths in one binary.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Fixed chunk width for [`try_fold_chunks`]. Part of numerical
/// reproducibility: the fold order inside and across chunks never depends
/// on thread count.
const CHUNK: usize = 16;

/// Fold `0..n` into per-chunk accumulators (chunks of a fixed width, in
/// parallel), then merge the chunk accumulators in index order.
pub fn try_fold_chunks<A, E, Make, Item, Merge>(
    n: usize,
    make: Make,
    item: Item,
    mut merge: Merge,
) -> Result<A, E>
where
    A: Send,
    E: Send,
    Make: Fn() -> A + Sync + Send,
    Item: Fn(&mut A, usize) -> Result<(), E> + Sync + Send,
    Merge: FnMut(&mut A, A),
{
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<Result<A, E>> = map_indexed(n_chunks, |c| {
        let mut acc = make();
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            item(&mut acc, i)?;
        }
        Ok(acc)
    });
    let mut out = make();
    for chunk in chunks {
        merge(&mut out, chunk?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = map_indexed(100, |i| (i as f64).sin());
        let b = map_indexed_seq(100, |i| (i as f64).sin());
        assert_eq!(a, b);
    }

    #[test]
    fn fold_chunks_sums_every_index_once() {
        let sum: Result<u64, ()> = try_fold_chunks(
            100,
            || 0u64,
            |acc, i| {
                *acc += i as u64;
                Ok(())
            },
            |a, b| *a += b,
        );
        assert_eq!(sum.unwrap(), 4950);
    }

    #[test]
    fn fold_chunks_propagates_errors() {
        let r: Result<(), usize> = try_fold_chunks(
            50,
            || (),
            |_, i| if i == 33 { Err(i) } else { Ok(()) },
            |_, _| (),
        );
        assert_eq!(r.unwrap_err(), 33);
    }

    #[test]
    fn fold_chunks_empty_range() {
        let sum: Result<u64, ()> =
            try_fold_chunks(0, || 7u64, |_, _| Ok(()), |a, b| *a += b);
        assert_eq!(sum.unwrap(), 7);
    }
}
