//! Deterministic data-parallel helpers.
//!
//! Work is cut into fixed-size chunks of samples. Chunks may run on any thread,
//! but their partial results are always combined left to right in chunk order,
//! which makes floating-point reductions independent of the thread count.

/// Samples per work chunk. Part of the numeric contract: changing it changes
/// the summation tree and therefore the last bits of reductions.
pub const CHUNK: usize = 256;

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
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

/// Splits `0..n` into [`CHUNK`]-sized ranges and maps each range.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    map_indexed(chunks, |c| {
        let start = c * CHUNK;
        f(start..(start + CHUNK).min(n))
    })
}

/// Chunked map followed by an in-order fold of the partials.
pub fn reduce_chunks<T, F, G>(n: usize, f: F, mut combine: G) -> Option<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    G: FnMut(T, T) -> T,
{
    let mut parts = map_chunks(n, f).into_iter();
    let first = parts.next()?;
    Some(parts.fold(first, &mut combine))
}

/// Runs `f` with at most `threads` worker threads. `0` means the rayon default.
/// Without the `parallel` feature this simply calls `f`.
#[cfg(feature = "parallel")]
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(err) => {
            log::warn!("could not build a {threads}-thread pool ({err}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, F>(_threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

/// Adds `src` into `dst` elementwise.
pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}

/// Derives an independent seed for sub-stream `stream` of `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_chunks_covers_range_in_order() {
        let n = CHUNK * 3 + 7;
        let ranges = map_chunks(n, |r| r);
        assert_eq!(ranges.len(), 4);
        assert_eq!(ranges[0], 0..CHUNK);
        assert_eq!(ranges[3], 3 * CHUNK..n);
    }

    #[test]
    fn reduce_is_thread_count_invariant() {
        let values: Vec<f64> = (0..5000).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let sum = |threads| {
            with_threads(threads, || {
                reduce_chunks(values.len(), |r| values[r].iter().sum::<f64>(), |a, b| a + b).unwrap()
            })
        };
        let one = sum(1);
        assert_eq!(one.to_bits(), sum(4).to_bits());
        assert_eq!(one.to_bits(), sum(7).to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        assert!(reduce_chunks(0, |_| 0.0, |a, b| a + b).is_none());
    }
}
