//! Synthetic longitudinal generator with a known conditional mean.
//!
//! Baseline items are equicorrelated Gaussians, covariates standard
//! Gaussians. Each item is first mixed into an item-aligned index
//! `U = X0 (I + κK) + Z Γ`, a coordinate-wise nonlinearity gives `φ(U)`, and
//! follow-ups are `X_t = φ(U) C_t + ε_t`. Every `C_t` has singular values in
//! `[0.5, 2]`, so the conditional mean `m_t = φ C_t` factorizes through an
//! invertible linear decoder.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetSchema, FollowUp, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Linear,
    /// `amplitude · tanh(slope · u)`.
    Tanh,
    /// Hinge with a cross-item interaction; misspecified on purpose.
    Piecewise,
}

/// Logistic missingness driven by baseline values only:
/// `P(missing) = σ(intercept + Σ_k w_k · [X0, Z]_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarRule {
    pub intercept: f64,
    /// One weight per baseline item followed by one per covariate.
    pub weights: Vec<f64>,
}

impl MarRule {
    /// Missingness driven by the first baseline item with the given logistic
    /// slope, with the intercept chosen so roughly `rate` of visits go missing.
    pub fn on_first_item(rate: f64, strength: f64, d: usize, q: usize) -> Self {
        let mut weights = vec![0.0; d + q];
        weights[0] = strength;
        // Probit approximation of E σ(a + sX), X ~ N(0, 1).
        let scale = (1.0 + std::f64::consts::PI * strength * strength / 8.0).sqrt();
        let intercept = (rate / (1.0 - rate)).ln() * scale;
        Self { intercept, weights }
    }

    pub fn missing_probability(&self, baseline: &[f64]) -> f64 {
        let eta = self.intercept + self.weights.iter().zip(baseline).map(|(w, v)| w * v).sum::<f64>();
        1.0 / (1.0 + (-eta).exp())
    }
}

fn default_correlation() -> f64 {
    0.3
}
fn default_cross() -> f64 {
    0.02
}
fn default_cov_weight() -> f64 {
    0.05
}
fn default_slope() -> f64 {
    10.0
}
fn default_amplitude() -> f64 {
    2.0
}
fn default_horizon_mixing() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    /// Number of follow-up time points; labels are `1..=t`.
    pub t: usize,
    pub nonlinearity: Nonlinearity,
    pub noise_sd: f64,
    #[serde(default)]
    pub mar: Option<MarRule>,
    #[serde(default)]
    pub seed: u64,
    /// Equicorrelation among baseline items.
    #[serde(default = "default_correlation")]
    pub baseline_correlation: f64,
    /// Scale κ of the cross-item term in the item index.
    #[serde(default = "default_cross")]
    pub cross_item_weight: f64,
    /// Scale of the covariate loadings Γ.
    #[serde(default = "default_cov_weight")]
    pub covariate_weight: f64,
    #[serde(default = "default_slope")]
    pub tanh_slope: f64,
    #[serde(default = "default_amplitude")]
    pub tanh_amplitude: f64,
    /// Off-diagonal scale of `C_t` at the last time point; earlier time
    /// points mix proportionally less.
    #[serde(default = "default_horizon_mixing")]
    pub horizon_mixing: f64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, q: usize, t: usize, nonlinearity: Nonlinearity, noise_sd: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            q,
            t,
            nonlinearity,
            noise_sd,
            mar: None,
            seed,
            baseline_correlation: default_correlation(),
            cross_item_weight: default_cross(),
            covariate_weight: default_cov_weight(),
            tanh_slope: default_slope(),
            tanh_amplitude: default_amplitude(),
            horizon_mixing: default_horizon_mixing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.d == 0 || self.t == 0 {
            return fail("need at least one item and one time point".into());
        }
        if self.n < 10 * self.d {
            return fail(format!("n = {} must be at least 10·d = {}", self.n, 10 * self.d));
        }
        if !self.noise_sd.is_finite() || self.noise_sd <= 0.0 {
            return fail(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(0.0..1.0).contains(&self.baseline_correlation) {
            return fail("baseline_correlation must lie in [0, 1)".into());
        }
        if let Some(mar) = &self.mar {
            if mar.weights.len() != self.d + self.q {
                return fail(format!(
                    "MAR rule has {} weights, baseline has {} columns",
                    mar.weights.len(),
                    self.d + self.q
                ));
            }
        }
        let finite = [
            self.cross_item_weight,
            self.covariate_weight,
            self.tanh_slope,
            self.tanh_amplitude,
            self.horizon_mixing,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("generator knobs must be finite".into());
        }
        Ok(())
    }
}

/// Closed-form conditional means `m_t(X0, Z)` of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleHandle {
    nonlinearity: Nonlinearity,
    tanh_slope: f64,
    tanh_amplitude: f64,
    noise_sd: f64,
    baseline_correlation: f64,
    /// `I + κK`, d×d.
    item_mixing: Matrix,
    /// Γ, q×d.
    covariate_loadings: Matrix,
    labels: Vec<u32>,
    /// `C_t` per label.
    decoders: Vec<Matrix>,
}

impl OracleHandle {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    fn index_of(&self, label: u32) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or(Error::UnknownTimePoint(label))
    }

    /// The known mixing matrix `C_t`.
    pub fn mixing(&self, label: u32) -> Result<&Matrix> {
        Ok(&self.decoders[self.index_of(label)?])
    }

    /// Stabilized item index φ(U) before mixing.
    pub fn signal(&self, x0: &Matrix, z: &Matrix) -> Result<Matrix> {
        let d = self.item_mixing.nrows();
        if x0.ncols() != d || z.ncols() != self.covariate_loadings.nrows() || x0.nrows() != z.nrows() {
            return Err(Error::shape(
                "oracle inputs",
                format!("n x {d} and n x {}", self.covariate_loadings.nrows()),
                format!("{}x{} and {}x{}", x0.nrows(), x0.ncols(), z.nrows(), z.ncols()),
            ));
        }
        let u = x0 * &self.item_mixing + z * &self.covariate_loadings;
        Ok(match self.nonlinearity {
            Nonlinearity::Linear => u,
            Nonlinearity::Tanh => u.map(|v| self.tanh_amplitude * (self.tanh_slope * v).tanh()),
            Nonlinearity::Piecewise => Matrix::from_fn(u.nrows(), d, |i, j| {
                let own = u[(i, j)];
                let next = u[(i, (j + 1) % d)];
                if own > 0.0 {
                    own + 0.5 * next
                } else {
                    0.0
                }
            }),
        })
    }

    /// `m_t(X0, Z) = E(X_t | X0, Z)`.
    pub fn conditional_mean(&self, label: u32, x0: &Matrix, z: &Matrix) -> Result<Matrix> {
        let c = self.mixing(label)?;
        Ok(self.signal(x0, z)? * c)
    }

    /// Population reconstruction matrix `B_t = Cov(X_t)⁻¹ Cov(X_t, X0)`,
    /// available in closed form for the linear generator only.
    pub fn population_reconstruction(&self, label: u32) -> Result<Matrix> {
        if self.nonlinearity != Nonlinearity::Linear {
            return Err(Error::InvalidSpec(
                "closed-form reconstruction needs the linear generator".into(),
            ));
        }
        let c = self.mixing(label)?;
        let d = c.nrows();
        let rho = self.baseline_correlation;
        let sigma0 = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        let a = &self.item_mixing;
        let g = &self.covariate_loadings;
        let cov_u = a.transpose() * &sigma0 * a + g.transpose() * g;
        let cov_t = c.transpose() * cov_u * c + Matrix::identity(d, d) * self.noise_sd.powi(2);
        let cross = c.transpose() * a.transpose() * sigma0;
        cov_t.cholesky().map(|ch| ch.solve(&cross)).ok_or(Error::Singular {
            condition: f64::INFINITY,
            limit: f64::INFINITY,
        })
    }

    /// Population decoder `β_t = B_t⁻¹` for the linear generator.
    pub fn population_decoder(&self, label: u32) -> Result<Matrix> {
        crate::linalg::invert_square(&self.population_reconstruction(label)?)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn clamp_singular_values(m: Matrix, lo: f64, hi: f64) -> Matrix {
    let svd = m.svd(true, true);
    let s = svd.singular_values.map(|v| v.clamp(lo, hi));
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    u * Matrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().copied())) * vt
}

/// Draws a dataset and its oracle. Structural parameters, samples and
/// missingness use separate ChaCha streams of `spec.seed`.
pub fn simulate(spec: &SyntheticSpec) -> Result<(LongitudinalDataset, OracleHandle)> {
    spec.validate()?;
    let (n, d, q, t) = (spec.n, spec.d, spec.q, spec.t);

    let mut structural = ChaCha8Rng::seed_from_u64(spec.seed);
    structural.set_stream(0);
    let mut k = gaussian_matrix(&mut structural, d, d, 1.0 / (d as f64).sqrt());
    k.fill_diagonal(0.0);
    let item_mixing = Matrix::identity(d, d) + k * spec.cross_item_weight;
    let covariate_loadings = gaussian_matrix(&mut structural, q, d, spec.covariate_weight);
    let decoders: Vec<Matrix> = (1..=t)
        .map(|step| {
            let scale = spec.horizon_mixing * step as f64 / t as f64 / (d as f64).sqrt();
            let mut off = gaussian_matrix(&mut structural, d, d, scale);
            off.fill_diagonal(0.0);
            clamp_singular_values(Matrix::identity(d, d) + off, 0.5, 2.0)
        })
        .collect();
    let labels: Vec<u32> = (1..=t as u32).collect();
    let oracle = OracleHandle {
        nonlinearity: spec.nonlinearity,
        tanh_slope: spec.tanh_slope,
        tanh_amplitude: spec.tanh_amplitude,
        noise_sd: spec.noise_sd,
        baseline_correlation: spec.baseline_correlation,
        item_mixing,
        covariate_loadings,
        labels: labels.clone(),
        decoders,
    };

    let mut samples = ChaCha8Rng::seed_from_u64(spec.seed);
    samples.set_stream(1);
    let rho = spec.baseline_correlation;
    let x0 = {
        let shared = gaussian_matrix(&mut samples, n, 1, rho.sqrt());
        let own = gaussian_matrix(&mut samples, n, d, (1.0 - rho).sqrt());
        Matrix::from_fn(n, d, |i, j| shared[(i, 0)] + own[(i, j)])
    };
    let z = gaussian_matrix(&mut samples, n, q, 1.0);
    let signal = oracle.signal(&x0, &z)?;

    let mut missing = ChaCha8Rng::seed_from_u64(spec.seed);
    missing.set_stream(2);
    let baseline: Vec<Vec<f64>> = (0..n)
        .map(|i| x0.row(i).iter().chain(z.row(i).iter()).copied().collect())
        .collect();
    let followups = labels
        .iter()
        .zip(&oracle.decoders)
        .map(|(&label, c)| {
            let values = &signal * c + gaussian_matrix(&mut samples, n, d, spec.noise_sd);
            let observed = match &spec.mar {
                None => vec![true; n],
                Some(rule) => baseline
                    .iter()
                    .map(|b| missing.random::<f64>() >= rule.missing_probability(b))
                    .collect(),
            };
            FollowUp {
                label,
                values,
                observed,
            }
        })
        .collect();
    let schema = DatasetSchema::generic(d, q, labels)?;
    let ids = (1..=n).map(|i| format!("s{i}")).collect();
    let dataset = LongitudinalDataset::new(schema, ids, x0, z, followups)?;
    Ok((dataset, oracle))
}

/// Mean squared difference between `pred` and `m_t(X0, Z)` over all entries.
pub fn oracle_mse(oracle: &OracleHandle, pred: &Matrix, x0: &Matrix, z: &Matrix, label: u32) -> Result<f64> {
    let truth = oracle.conditional_mean(label, x0, z)?;
    if truth.shape() != pred.shape() {
        return Err(Error::shape(
            "oracle_mse",
            format!("{}x{}", truth.nrows(), truth.ncols()),
            format!("{}x{}", pred.nrows(), pred.ncols()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::shape("oracle_mse", "at least one row", 0));
    }
    Ok((pred - truth).map(|v| v * v).mean())
}
