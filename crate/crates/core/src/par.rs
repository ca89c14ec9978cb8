//! Data-parallel map used by the Gram builder, cross-validation and the
//! Monte-Carlo checks.
//!
//! Every parallel task writes to its own output slot and results are
//! collected in input order, so outputs do not depend on the thread count.
//! Without the `parallel` feature both modes run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

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

impl Exec {
    /// Maps `f` over `0..n` and returns results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over `items` and returns results in input order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Applies `f(j, chunk)` to consecutive `chunk_len`-sized chunks of `out`.
    pub fn for_each_chunk<T, F>(self, out: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => out
                .par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(j, c)| f(j, c)),
            _ => out
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(j, c)| f(j, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 7;
        assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel.map(&xs, f));
        assert_eq!(
            Exec::Sequential.map_range(37, |i| i * i),
            Exec::Parallel.map_range(37, |i| i * i)
        );
        let mut a = vec![0usize; 30];
        let mut b = vec![0usize; 30];
        Exec::Sequential.for_each_chunk(&mut a, 7, |j, c| c.iter_mut().for_each(|v| *v = j));
        Exec::Parallel.for_each_chunk(&mut b, 7, |j, c| c.iter_mut().for_each(|v| *v = j));
        assert_eq!(a, b);
    }
}
