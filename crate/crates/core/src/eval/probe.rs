use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{derive_seed, log_log_slope, median};
use crate::data::{simulate, Nonlinearity, SyntheticSpec};
use crate::error::{Error, Result};
use crate::learner::{ForestConfig, LearnerSpec};
use crate::model::{DecoderMode, RefineModel};

/// Training-cost sweeps over `n`, `d` and the number of time points. Each
/// configuration is timed `repeats` times and the median is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub n_sizes: Vec<usize>,
    pub d_sizes: Vec<usize>,
    /// `d` used by the n-sweep and the T comparison.
    pub base_d: usize,
    /// `n` used by the d-sweep and the T comparison.
    pub base_n: usize,
    pub q: usize,
    /// The T comparison times `base_t` and `2·base_t` time points.
    pub base_t: usize,
    pub nonlinearity: Nonlinearity,
    pub noise_sd: f64,
    pub forest: ForestConfig,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_sizes: vec![2000, 4000, 8000, 16000],
            d_sizes: vec![5, 10, 20],
            base_d: 10,
            base_n: 2000,
            q: 2,
            base_t: 2,
            nonlinearity: Nonlinearity::Tanh,
            noise_sd: 0.5,
            forest: ForestConfig {
                n_trees: 50,
                parallel: false,
                ..ForestConfig::default()
            },
            repeats: 3,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sizes.len() < 3 || self.d_sizes.len() < 3 {
            return Err(Error::InvalidSpec("each swept axis needs at least 3 sizes".into()));
        }
        if self.repeats == 0 || self.base_t == 0 {
            return Err(Error::InvalidSpec("repeats and base_t must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    /// Median wall-clock training seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub n_sweep: Vec<TimingPoint>,
    pub d_sweep: Vec<TimingPoint>,
    pub t_pair: [TimingPoint; 2],
    pub n_slope: f64,
    pub d_slope: f64,
    /// Time at `2·base_t` over time at `base_t`.
    pub t_ratio: f64,
}

impl TimingTable {
    /// Time ratios between consecutive points of a sweep.
    pub fn step_ratios(points: &[TimingPoint]) -> Vec<f64> {
        points.windows(2).map(|w| w[1].seconds / w[0].seconds).collect()
    }
}

pub fn complexity_probe(config: &ProbeConfig) -> Result<TimingTable> {
    config.validate()?;
    let time = |n: usize, d: usize, t: usize| -> Result<TimingPoint> {
        let spec = SyntheticSpec::new(
            n,
            d,
            config.q,
            t,
            config.nonlinearity,
            config.noise_sd,
            derive_seed(config.seed, n as u64, d as u64),
        );
        let (data, _) = simulate(&spec)?;
        let learner = LearnerSpec::random_forest(config.forest.clone(), config.seed);
        let mut secs = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let started = Instant::now();
            RefineModel::fit(&data, &learner, DecoderMode::Invert)?;
            secs.push(started.elapsed().as_secs_f64());
        }
        Ok(TimingPoint {
            n,
            d,
            t,
            seconds: median(&secs),
        })
    };
    let n_sweep = config
        .n_sizes
        .iter()
        .map(|&n| time(n, config.base_d, 1))
        .collect::<Result<Vec<_>>>()?;
    let d_sweep = config
        .d_sizes
        .iter()
        .map(|&d| time(config.base_n, d, 1))
        .collect::<Result<Vec<_>>>()?;
    let t_pair = [
        time(config.base_n, config.base_d, config.base_t)?,
        time(config.base_n, config.base_d, 2 * config.base_t)?,
    ];
    let slope = |pts: &[TimingPoint], x: fn(&TimingPoint) -> usize| {
        log_log_slope(&pts.iter().map(|p| (x(p) as f64, p.seconds)).collect::<Vec<_>>())
    };
    Ok(TimingTable {
        n_slope: slope(&n_sweep, |p| p.n),
        d_slope: slope(&d_sweep, |p| p.d),
        t_ratio: t_pair[1].seconds / t_pair[0].seconds,
        n_sweep,
        d_sweep,
        t_pair,
    })
}
