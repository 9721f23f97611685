//! Data-parallel map with a sequential fallback.
//!
//! Grid points, replay factors and per-task evaluations are independent, so
//! they fan out over rayon when the `parallel` feature is on. Output order
//! always matches input order, so results are identical either way.

use serde::{Deserialize, Serialize};

/// Execution mode for independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

/// Map `f` over `items`, preserving order. `Rayon` falls back to the
/// sequential path when the crate is built without the `parallel` feature.
pub fn map_items<T, U, F>(items: &[T], mode: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}
