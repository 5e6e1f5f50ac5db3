//! Shared fixtures for the benchmarks.

use refine::{simulate, ForestConfig, LongitudinalDataset, Nonlinearity, SyntheticSpec};

/// Tanh-generator dataset with `t` follow-up times and two covariates.
pub fn dataset(n: usize, d: usize, t: usize) -> LongitudinalDataset {
    simulate(&SyntheticSpec::new(n, d, 2, t, Nonlinearity::Tanh, 0.5, 42))
        .expect("valid benchmark spec")
        .0
}

/// Sequential forest so timings do not depend on the thread pool.
pub fn forest(n_trees: usize) -> ForestConfig {
    ForestConfig {
        n_trees,
        parallel: false,
        ..ForestConfig::default()
    }
}
