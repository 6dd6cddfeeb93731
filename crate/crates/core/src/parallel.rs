//! Data-parallel map over replication/grid indices, with a sequential
//! fallback when the `parallel` feature is disabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order is by index either way.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    map_indexed_seq(n, f)
}

/// Always-sequential variant; the benchmark suite compares the two and the
/// tests assert they agree.
pub fn map_indexed_seq<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let par = map_indexed(257, |i| i * i);
        let seq = map_indexed_seq(257, |i| i * i);
        assert_eq!(par, seq);
    }
}
