//! Order-preserving data-parallel map.

use crate::error::AppResult;

/// `f(0..n)` collected in index order; runs on the rayon pool when the
/// `parallel` feature is on.
pub fn ordered_map<T, F>(n: usize, f: F) -> AppResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> AppResult<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
