//! Sequential or data-parallel execution of independent jobs. Without the `parallel`
//! feature both variants run on the calling thread.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether jobs actually run on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `items`; output order follows input order either way.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps over `range` and folds the results with `combine`, which must be associative
    /// and commutative for the parallel result to match the sequential one.
    pub fn map_reduce<R, M, C>(self, range: Range<u64>, identity: R, map: M, combine: C) -> R
    where
        R: Send + Sync + Clone,
        M: Fn(u64) -> R + Sync + Send,
        C: Fn(R, R) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return range.into_par_iter().map(map).reduce(|| identity.clone(), combine);
        }
        range.map(map).fold(identity, combine)
    }
}
