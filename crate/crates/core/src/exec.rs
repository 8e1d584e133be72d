//! Feature-gated data-parallel plumbing.
//!
//! Every hot loop in this crate funnels through these helpers so that the
//! `parallel` feature flag is the single switch between rayon and a plain
//! sequential loop. Callers that want to benchmark one against the other use
//! the explicit `*_seq` / `*_par` variants exported by each module instead.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when this build dispatches hot loops through rayon.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Sequential map over a slice, preserving order.
pub fn map_slice_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Rayon map over a slice; output order still matches input order.
#[cfg(feature = "parallel")]
pub fn map_slice_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    items.par_iter().map(f).collect()
}

/// Map over a slice using whichever strategy the build selected.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        map_slice_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_slice_seq(items, f)
    }
}

/// Map each index in `0..n` to a value, in parallel when available.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_variants_agree_and_preserve_order() {
        let xs: Vec<i64> = (0..1000).collect();
        let seq = map_slice_seq(&xs, |x| x * x);
        let dispatched = map_slice(&xs, |x| x * x);
        assert_eq!(seq, dispatched);
        assert_eq!(seq[3], 9);
        let by_index = map_indices(xs.len(), |i| xs[i] * xs[i]);
        assert_eq!(seq, by_index);
    }
}
