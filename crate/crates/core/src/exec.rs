//! Execution mode for the data-parallel loops.
//!
//! With the `parallel` feature (default) the helpers here dispatch to rayon;
//! without it, or after `set_mode(Execution::Sequential)`, they run in order
//! on the calling thread. Results never depend on the mode: every parallel
//! loop writes into a fixed slot per item and reductions happen afterwards in
//! index order.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Select the execution mode for subsequent calls. `Parallel` is a no-op
/// downgrade to `Sequential` when the crate is built without `parallel`.
pub fn set_mode(mode: Execution) {
    PARALLEL.store(
        cfg!(feature = "parallel") && mode == Execution::Parallel,
        Ordering::SeqCst,
    );
}

pub fn mode() -> Execution {
    if PARALLEL.load(Ordering::Relaxed) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == Execution::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Apply `f` to every element of `items` with its index, possibly in parallel.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == Execution::Parallel && items.len() > 1 {
            use rayon::prelude::*;
            items
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, t)| f(i, t));
            return;
        }
    }
    for (i, t) in items.iter_mut().enumerate() {
        f(i, t);
    }
}
