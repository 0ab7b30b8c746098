//! Worker-pool sizing. Results never depend on the number of workers: every
//! parallel map collects in index order.

use rayon::prelude::*;

use crate::error::Result;

pub const THREADS_ENV: &str = "CRS_RLHF_THREADS";

/// Caps the global pool at `CRS_RLHF_THREADS` when set. Later calls are no-ops.
pub fn init_from_env() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// `f(0..n)` in parallel, results in index order; the first error by index wins.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}
