//! Execution mode for the data-parallel inner loops (batch gradients,
//! per-bin enhancement, evaluation sweeps).
//!
//! Every parallel reduction in the crate collects per-chunk results in index
//! order and folds them sequentially, so `Sequential` and `Parallel` produce
//! bit-identical numbers. Without the `parallel` feature both modes run on the
//! calling thread.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Configure the global worker pool. Returns an error string if the pool was
/// already initialised with a different size.
pub fn set_threads(n: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

/// `f` applied to each index in `0..n`, results in index order.
pub fn map_indexed<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Split `0..n` into at most `chunks` contiguous ranges. The split depends
/// only on `n` and `chunks`, never on the thread count.
pub fn chunk_ranges(n: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let chunks = chunks.clamp(1, n);
    let base = n / chunks;
    let extra = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_exactly() {
        for n in 0..40 {
            for c in 1..10 {
                let r = chunk_ranges(n, c);
                let total: usize = r.iter().map(|x| x.len()).sum();
                assert_eq!(total, n);
                for w in r.windows(2) {
                    assert_eq!(w[0].end, w[1].start);
                }
            }
        }
    }

    #[test]
    fn modes_agree() {
        let a = map_indexed(ExecMode::Sequential, 100, |i| (i as f64).sqrt());
        let b = map_indexed(ExecMode::Parallel, 100, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }
}
