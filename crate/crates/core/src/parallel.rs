//! Data-parallel inner loops with a sequential fallback.
//!
//! With the `parallel` feature (default) the [`Parallelism::Rayon`] mode runs
//! loops on the rayon thread pool; without the feature `Rayon` degrades to
//! the sequential path. Results are identical in both modes: every loop
//! writes independent slots that are assembled in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Plain sequential loops.
    Sequential,
    /// Rayon work-stealing pool; sequential when the `parallel` feature is off.
    #[default]
    Rayon,
}

impl Parallelism {
    fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

/// Visit every element of a mutable slice, one task per element.
pub fn for_each_mut<T, F>(mode: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        items
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, item)| f(i, item));
        return;
    }
    let _ = mode;
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}

/// Collect `f(0..n)` preserving index order.
pub fn map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the error for the lowest index wins.
pub fn try_map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        let results: Vec<crate::Result<T>> = (0..n).into_par_iter().map(f).collect();
        return results.into_iter().collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_default_agree() {
        let a = map_indexed(Parallelism::Sequential, 100, |i| i * i);
        let b = map_indexed(Parallelism::default(), 100, |i| i * i);
        assert_eq!(a, b);
    }
}
