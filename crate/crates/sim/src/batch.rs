//! Batch execution of independent runs. With the `parallel` feature the
//! work is spread over a rayon pool; without it, or in `Sequential` mode,
//! items run one after another. Results keep input order either way.

use crate::runner::{run, RunError, RunReport};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

impl Mode {
    /// `Parallel` when the feature is compiled in.
    pub fn best() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel
        } else {
            Mode::Sequential
        }
    }
}

/// Applies `f` to every item, in parallel when possible.
pub fn map<T, R, F>(items: &[T], mode: Mode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

pub fn run_batch(scenarios: &[Scenario], mode: Mode) -> Vec<Result<RunReport, RunError>> {
    map(scenarios, mode, run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..100).collect();
        let seq = map(&xs, Mode::Sequential, |x| x * x);
        let par = map(&xs, Mode::best(), |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
