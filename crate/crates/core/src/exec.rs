//! Order-preserving map over independent work items, sequential or on rayon.

/// How independent items (pairs, graphs, RoIs) are processed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon's global pool. Available with the `parallel` feature.
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
    #[cfg(not(feature = "parallel"))]
    #[default]
    #[doc(hidden)]
    SequentialDefault,
}

impl Exec {
    /// Map `f` over `items`, returning results in input order. Results never
    /// depend on the variant: reductions over the output happen in order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn is_parallel(self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self == Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }
}
