use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, log_log_slope, median};
use crate::data::{simulate, Nonlinearity, SyntheticSpec};
use crate::error::{Error, Result};
use crate::learner::{fit_learner, predict_learner, LearnerSpec};
use crate::linalg::{
    column_means, fit_ols_guarded, invert_square_guarded, select_rows, subtract_row, CoefficientMatrix, ConditionGuard,
    Matrix,
};
use crate::model::{follow_up_proxy, DecoderMode};

/// Decoder convergence experiment. At every sample size the fitted
/// preprocessor output `Ĥ` is distorted by `Ĥ + c·n^{-r}·(Ĥ − mean)·G` with a
/// fresh Gaussian `G` (entries of variance `1/d`), so its error shrinks at
/// the slower rate `n^{-r}`. Both decoders are then built on the distorted
/// features and compared against the population decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// Generator template; `n` and `seed` are overridden and only the first
    /// follow-up time is used. Must be the linear generator.
    pub template: SyntheticSpec,
    pub learner: LearnerSpec,
    pub perturbation_scale: f64,
    pub perturbation_exponent: f64,
    pub seed: u64,
    pub guard: ConditionGuard,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 2000, 8000, 32000],
            replicates: 50,
            template: SyntheticSpec::new(500, 5, 2, 1, Nonlinearity::Linear, 0.5, 0),
            learner: LearnerSpec::linear(),
            perturbation_scale: 1.0,
            perturbation_exponent: 0.25,
            seed: 0,
            guard: ConditionGuard::default(),
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 3 {
            return Err(Error::InvalidSpec("rate grid needs at least 3 sizes".into()));
        }
        let lo = *self.sizes.iter().min().unwrap() as f64;
        let hi = *self.sizes.iter().max().unwrap() as f64;
        if hi < 10.0 * lo {
            return Err(Error::InvalidSpec("rate grid must span at least one decade".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidSpec("at least one replicate is required".into()));
        }
        if self.template.nonlinearity != Nonlinearity::Linear {
            return Err(Error::InvalidSpec(
                "rate experiment needs the linear generator (closed-form decoder)".into(),
            ));
        }
        if !self.perturbation_scale.is_finite() || self.perturbation_scale < 0.0 {
            return Err(Error::InvalidSpec("perturbation_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Errors of one replicate at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateErrors {
    pub replicate: usize,
    /// `‖β̂ − β‖_F` for the inverted decoder.
    pub invert_beta: f64,
    pub refit_beta: f64,
    /// Root mean squared row norm of `prediction − m_t`.
    pub invert_end_to_end: f64,
    pub refit_end_to_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub invert_median: f64,
    pub refit_median: f64,
    pub invert_end_to_end_median: f64,
    pub refit_end_to_end_median: f64,
    /// Share of replicates where the inverted decoder has the smaller
    /// coefficient error.
    pub invert_win_fraction: f64,
    pub replicates: Vec<ReplicateErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub invert_slope: f64,
    pub refit_slope: f64,
    pub invert_end_to_end_slope: f64,
    pub refit_end_to_end_slope: f64,
}

impl RateTable {
    fn slope(rows: &[RateRow], f: impl Fn(&RateRow) -> f64) -> f64 {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, f(r))).collect();
        log_log_slope(&pts)
    }

    fn from_rows(rows: Vec<RateRow>) -> Self {
        Self {
            invert_slope: Self::slope(&rows, |r| r.invert_median),
            refit_slope: Self::slope(&rows, |r| r.refit_median),
            invert_end_to_end_slope: Self::slope(&rows, |r| r.invert_end_to_end_median),
            refit_end_to_end_slope: Self::slope(&rows, |r| r.refit_end_to_end_median),
            rows,
        }
    }

    /// Long format: n, replicate, mode, beta_error, end_to_end_error.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["n", "replicate", "mode", "beta_error", "end_to_end_error"])?;
        for row in &self.rows {
            for r in &row.replicates {
                for (mode, beta, e2e) in [
                    ("invert", r.invert_beta, r.invert_end_to_end),
                    ("refit_ols", r.refit_beta, r.refit_end_to_end),
                ] {
                    w.write_record([
                        row.n.to_string(),
                        r.replicate.to_string(),
                        mode.to_owned(),
                        beta.to_string(),
                        e2e.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rate_experiment(config: &RateConfig) -> Result<RateTable> {
    config.validate()?;
    let rows = config
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let replicates: Vec<ReplicateErrors> = (0..config.replicates)
                .into_par_iter()
                .map(|r| run_replicate(config, n, derive_seed(config.seed, i as u64, r as u64), r))
                .collect::<Result<_>>()?;
            let col = |f: fn(&ReplicateErrors) -> f64| median(&replicates.iter().map(f).collect::<Vec<_>>());
            let wins = replicates.iter().filter(|r| r.invert_beta < r.refit_beta).count();
            Ok(RateRow {
                n,
                invert_median: col(|r| r.invert_beta),
                refit_median: col(|r| r.refit_beta),
                invert_end_to_end_median: col(|r| r.invert_end_to_end),
                refit_end_to_end_median: col(|r| r.refit_end_to_end),
                invert_win_fraction: wins as f64 / replicates.len() as f64,
                replicates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateTable::from_rows(rows))
}

fn run_replicate(config: &RateConfig, n: usize, seed: u64, replicate: usize) -> Result<ReplicateErrors> {
    let spec = SyntheticSpec {
        n,
        seed,
        ..config.template.clone()
    };
    let (data, oracle) = simulate(&spec)?;
    let fu = &data.followups()[0];
    let label = fu.label;
    let truth_beta = oracle.population_decoder(label)?;
    let truth = oracle.conditional_mean(label, data.x0(), data.z())?;
    let d = data.schema().d();
    let rows = fu.observed_rows();
    let x0 = select_rows(data.x0(), &rows);
    let xt = select_rows(&fu.values, &rows);
    let features = select_rows(&data.features(), &rows);
    let truth = select_rows(&truth, &rows);

    let (reconstruction, proxy) = follow_up_proxy(&x0, &xt, config.guard)?;
    let learner = fit_learner(&config.learner.clone().with_seed(seed), &features, &proxy)?;
    let fitted = predict_learner(&learner, &features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt());
    let eps = config.perturbation_scale * (rows.len() as f64).powf(-config.perturbation_exponent);
    let means = column_means(&fitted);
    let mut centered = fitted.clone();
    subtract_row(&mut centered, &means);
    let perturbed = &fitted + (centered * &g) * eps;

    let xt_means = column_means(&xt);
    let mut errors = [(0.0, 0.0); 2];
    for (slot, mode) in [DecoderMode::Invert, DecoderMode::RefitOls].into_iter().enumerate() {
        let decoder = match mode {
            DecoderMode::Invert => {
                let beta = invert_square_guarded(reconstruction.values(), config.guard)?;
                CoefficientMatrix::new(beta, column_means(&perturbed), xt_means.clone())?
            }
            DecoderMode::RefitOls => fit_ols_guarded(&perturbed, &xt, config.guard)?,
        };
        let beta_err = (decoder.values() - &truth_beta).norm();
        let resid = decoder.predict(&perturbed)? - &truth;
        let e2e = (resid.norm_squared() / resid.nrows() as f64).sqrt();
        errors[slot] = (beta_err, e2e);
    }
    Ok(ReplicateErrors {
        replicate,
        invert_beta: errors[0].0,
        refit_beta: errors[1].0,
        invert_end_to_end: errors[0].1,
        refit_end_to_end: errors[1].1,
    })
}
