//! Process-wide threading mode.
//!
//! Kernels split work per batch sample and always reduce partial results in
//! sample order, so the parallel path is bitwise identical to the
//! single-threaded one. `deterministic` mode simply never touches the pool.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Forces every kernel onto the calling thread.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

/// Evaluates `f` for every index in `0..n`, returning results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n < 2 || is_deterministic() || rayon::current_num_threads() < 2 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
