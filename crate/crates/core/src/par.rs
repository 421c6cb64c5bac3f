//! Data-parallel map over independent work items. With the `parallel`
//! feature the work runs on the rayon pool; without it, or when
//! [`Execution::Sequential`] is requested, it runs in order on the caller.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Auto,
    Sequential,
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Execution::Sequential
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_in_every_mode() {
        let xs: Vec<u64> = (0..1000).collect();
        for exec in [Execution::Auto, Execution::Sequential, Execution::Parallel] {
            assert_eq!(map(&xs, exec, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
        }
    }
}
