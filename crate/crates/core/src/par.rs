//! Execution strategy for the data-parallel inner loops.
//!
//! With the `parallel` feature (the default) [`Exec::Parallel`] fans work out
//! over rayon's global pool. Without it, both variants run sequentially, so
//! callers never need their own `cfg` switches. Results are identical either
//! way: every closure here is applied independently per element and outputs
//! keep input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Slices shorter than this are processed inline even under `Parallel`.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 8;

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
    /// True when work is actually dispatched to a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
            items.par_iter_mut().for_each(f);
            return;
        }
        items.iter_mut().for_each(f)
    }

    /// Maps over `0..n`; used to fan out independent seeded trials.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let xs: Vec<u64> = (0..100).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);

        let mut ys = xs.clone();
        Exec::Parallel.for_each_mut(&mut ys, |y| *y += 1);
        assert_eq!(ys[99], 100);
        assert_eq!(Exec::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
