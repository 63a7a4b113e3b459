//! Data-parallel loop helpers.
//!
//! Every hot loop in the crate goes through one of these functions. With the
//! default `parallel` feature they run on the rayon thread pool; built with
//! `--no-default-features` they degrade to plain sequential iteration with no
//! rayon dependency at all.
//!
//! Outputs are always collected in index order, and reductions combine
//! fixed-size chunk results sequentially, so results are bit-identical
//! between the two modes and across thread counts.

/// Chunk width used for deterministic parallel reductions.
pub(crate) const REDUCE_CHUNK: usize = 64;

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }

    pub fn try_map_indexed<U, E, F>(n: usize, f: F) -> Result<Vec<U>, E>
    where
        U: Send,
        E: Send,
        F: Fn(usize) -> Result<U, E> + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..n).map(f).collect()
    }

    pub fn try_map_indexed<U, E, F>(n: usize, f: F) -> Result<Vec<U>, E>
    where
        F: Fn(usize) -> Result<U, E>,
    {
        (0..n).map(f).collect()
    }
}

pub(crate) use imp::{map_indexed, try_map_indexed};

/// Maps fixed-size index chunks and returns the per-chunk results in order.
///
/// The caller folds the returned chunks sequentially, which keeps floating
/// point accumulation order independent of the thread count.
pub(crate) fn map_chunks<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    map_indexed(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        f(start..end)
    })
}

/// True when the crate was built with the rayon-backed loops.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let out = map_indexed(100, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn map_chunks_covers_every_index_once() {
        let chunks = map_chunks(1000, |r| r.collect::<Vec<_>>());
        let flat: Vec<usize> = chunks.into_iter().flatten().collect();
        assert_eq!(flat, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn try_map_indexed_propagates_errors() {
        let res: Result<Vec<usize>, String> =
            try_map_indexed(10, |i| if i == 7 { Err("boom".to_string()) } else { Ok(i) });
        assert!(res.is_err());
    }
}
