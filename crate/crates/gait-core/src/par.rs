//! Worker-capped parallel mapping with deterministic assembly order.
//!
//! Results are collected in input order regardless of completion order, so
//! any worker count produces identical output; `workers <= 1` is the fully
//! serial reference mode.

use rayon::prelude::*;

pub fn map_ordered<I, O, F>(items: &[I], workers: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Send + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.min(items.len()))
        .build();
    match pool {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        // Pool creation can only fail under resource exhaustion; fall back
        // to the serial path rather than aborting the step.
        Err(_) => items.iter().map(f).collect(),
    }
}
