//! Forward/backward correlation, contribution matrices and their diagonal
//! cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fit_ols, fit_ridge, hstack, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    ForwardCorrelation,
    BackwardCorrelation,
    CosineDiagonal,
    RuntimeSeconds,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::ForwardCorrelation => "forward_correlation",
            MetricName::BackwardCorrelation => "backward_correlation",
            MetricName::CosineDiagonal => "cosine_diagonal",
            MetricName::RuntimeSeconds => "runtime_seconds",
        }
    }
}

/// How per-item correlations are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over items of the per-item Pearson correlation.
    #[default]
    ItemMean,
    /// One Pearson correlation over all (row, item) pairs, each item centered
    /// by its own mean first.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationScore {
    pub value: f64,
    pub scored_items: usize,
    /// Items skipped because the observed column is constant.
    pub skipped_items: usize,
}

fn pearson(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone, n: usize) -> Option<f64> {
    let nf = n as f64;
    let ma = a.clone().sum::<f64>() / nf;
    let mb = b.clone().sum::<f64>() / nf;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if sbb == 0.0 {
        return None;
    }
    if saa == 0.0 {
        // A constant prediction carries no linear association.
        return Some(0.0);
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean per-item Pearson correlation between predicted and observed items.
pub fn forward_correlation(pred: &Matrix, obs: &Matrix) -> Result<CorrelationScore> {
    forward_correlation_with(pred, obs, Aggregation::ItemMean)
}

pub fn forward_correlation_with(pred: &Matrix, obs: &Matrix, aggregation: Aggregation) -> Result<CorrelationScore> {
    if pred.shape() != obs.shape() {
        return Err(Error::shape(
            "forward_correlation",
            format!("{}x{}", obs.nrows(), obs.ncols()),
            format!("{}x{}", pred.nrows(), pred.ncols()),
        ));
    }
    let m = obs.nrows();
    if m < 3 {
        return Err(Error::InsufficientData {
            available: m,
            required: 2,
        });
    }
    crate::linalg::ensure_finite(pred, "forward_correlation predictions")?;
    crate::linalg::ensure_finite(obs, "forward_correlation observations")?;
    let scoreable: Vec<usize> = (0..obs.ncols())
        .filter(|&j| obs.column(j).iter().any(|&v| v != obs[(0, j)]))
        .collect();
    let skipped_items = obs.ncols() - scoreable.len();
    if scoreable.is_empty() {
        return Err(Error::AllColumnsConstant);
    }
    let value = match aggregation {
        Aggregation::ItemMean => {
            let total: f64 = scoreable
                .iter()
                .map(|&j| {
                    pearson(pred.column(j).iter().copied(), obs.column(j).iter().copied(), m)
                        .expect("observed column is not constant")
                })
                .sum();
            total / scoreable.len() as f64
        }
        Aggregation::Pooled => {
            let centered = |mat: &Matrix| -> Vec<f64> {
                scoreable
                    .iter()
                    .flat_map(|&j| {
                        let col = mat.column(j);
                        let mu = col.mean();
                        col.iter().map(move |v| v - mu).collect::<Vec<_>>()
                    })
                    .collect()
            };
            let (p, o) = (centered(pred), centered(obs));
            pearson(p.iter().copied(), o.iter().copied(), p.len()).unwrap_or(0.0)
        }
    };
    Ok(CorrelationScore {
        value,
        scored_items: scoreable.len(),
        skipped_items,
    })
}

/// Column standardization with statistics from a training split. Constant
/// columns are centered only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &Matrix) -> Self {
        let n = m.nrows() as f64;
        let means: Vec<f64> = m.column_iter().map(|c| c.sum() / n).collect();
        let scales = m
            .column_iter()
            .zip(&means)
            .map(|(c, mu)| {
                let var = c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, scales }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            (m[(i, j)] - self.means[j]) / self.scales[j]
        })
    }
}

/// How well follow-up items reconstruct a baseline-derived representation:
/// ridge from standardized `xt_train` to `derived_train`, scored by
/// [`forward_correlation`] on the test split.
pub fn backward_correlation(
    derived_train: &Matrix,
    xt_train: &Matrix,
    derived_test: &Matrix,
    xt_test: &Matrix,
    lambda: f64,
) -> Result<CorrelationScore> {
    backward_correlation_with(
        derived_train,
        xt_train,
        derived_test,
        xt_test,
        lambda,
        Aggregation::ItemMean,
    )
}

pub fn backward_correlation_with(
    derived_train: &Matrix,
    xt_train: &Matrix,
    derived_test: &Matrix,
    xt_test: &Matrix,
    lambda: f64,
    aggregation: Aggregation,
) -> Result<CorrelationScore> {
    if xt_train.nrows() < 3 {
        return Err(Error::InsufficientData {
            available: xt_train.nrows(),
            required: 2,
        });
    }
    if xt_test.ncols() != xt_train.ncols() {
        return Err(Error::shape(
            "backward_correlation follow-up items",
            xt_train.ncols(),
            xt_test.ncols(),
        ));
    }
    let scaler = Standardizer::fit(xt_train);
    let ridge = fit_ridge(&scaler.apply(xt_train), derived_train, lambda)?;
    let reconstruction = ridge.predict(&scaler.apply(xt_test))?;
    forward_correlation_with(&reconstruction, derived_test, aggregation)
}

/// Global linear surrogate of a predictor: the baseline-item block of the
/// OLS coefficients of `predictions` on `[X0, Z]`. Rows are baseline items,
/// columns predicted follow-up items.
pub fn contribution_matrix(x0: &Matrix, z: &Matrix, predictions: &Matrix) -> Result<Matrix> {
    let d = x0.ncols();
    let p = d + z.ncols();
    if x0.nrows() < p + 2 {
        return Err(Error::InsufficientData {
            available: x0.nrows(),
            required: p + 1,
        });
    }
    let fit = fit_ols(&hstack(x0, z)?, predictions)?;
    Ok(fit.values().rows(0, d).into_owned())
}

/// `‖diag(M)‖_F / ‖M‖_F`, i.e. the cosine between `M` and its diagonal part.
pub fn cosine_diagonal(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::shape("cosine_diagonal", "non-empty matrix", "0 entries"));
    }
    crate::linalg::ensure_finite(m, "cosine_diagonal")?;
    let diag: f64 = m.diagonal().iter().map(|v| v * v).sum();
    if diag == 0.0 {
        return Err(Error::ZeroDiagonal);
    }
    let total: f64 = m.iter().map(|v| v * v).sum();
    Ok((diag / total).sqrt().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn forward_examples() {
        let obs = Matrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 4.0, 2.0]);
        assert_abs_diff_eq!(forward_correlation(&obs, &obs).unwrap().value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            forward_correlation(&(-&obs), &obs).unwrap().value,
            -1.0,
            epsilon = 1e-12
        );
        // Hand computation: centered (−1,0,1) and (−4/3,−1/3,5/3) give
        // 3 / (√2 · √(42/9)) = 0.981981...
        let r = forward_correlation(&col(&[1.0, 2.0, 3.0]), &col(&[1.0, 2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(r.value, 3.0 / (2f64.sqrt() * (42.0f64 / 9.0).sqrt()), epsilon = 1e-12);
        assert_abs_diff_eq!(r.value, 0.98198, epsilon = 1e-5);
    }

    #[test]
    fn forward_skips_constant_items() {
        let obs = Matrix::from_row_slice(3, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0]);
        let pred = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, 2.0]);
        let r = forward_correlation(&pred, &obs).unwrap();
        assert_eq!((r.scored_items, r.skipped_items), (1, 1));
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-12);
        let flat = Matrix::from_element(4, 2, 3.0);
        assert!(matches!(
            forward_correlation(&flat, &flat),
            Err(Error::AllColumnsConstant)
        ));
        assert!(forward_correlation(&col(&[1.0, 2.0]), &col(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn pooled_aggregation_on_identity() {
        let obs = Matrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 4.0, 2.0]);
        let r = forward_correlation_with(&obs, &obs, Aggregation::Pooled).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_identity_and_linear_recovery() {
        let xt = Matrix::from_fn(30, 3, |i, j| {
            ((i * 7 + j * 5) % 13) as f64 + (i as f64 * 0.3 + j as f64).sin()
        });
        let r = backward_correlation(&xt, &xt, &xt, &xt, 0.0).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-10);
        let b = Matrix::from_row_slice(3, 2, &[1.0, -0.5, 2.0, 0.0, 0.3, 1.2]);
        let derived = &xt * &b;
        let r = backward_correlation(&derived, &xt, &derived, &xt, 0.0).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn contribution_examples() {
        let x0 = Matrix::from_fn(12, 2, |i, j| ((i * 5 + j * 3) % 7) as f64 + (i * j) as f64 * 0.1);
        let z = Matrix::from_fn(12, 1, |i, _| (i % 3) as f64);
        let id = contribution_matrix(&x0, &z, &x0).unwrap();
        assert!(crate::linalg::max_abs_diff(&id, &Matrix::identity(2, 2)) < 1e-8);
        let dm = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        let scaled = contribution_matrix(&x0, &z, &(&x0 * &dm)).unwrap();
        assert!(crate::linalg::max_abs_diff(&scaled, &dm) < 1e-8);
        let flat = contribution_matrix(&x0, &z, &Matrix::from_element(12, 2, 4.0)).unwrap();
        assert!(flat.amax() < 1e-10);
        assert!(contribution_matrix(
            &x0.rows(0, 4).into_owned(),
            &z.rows(0, 4).into_owned(),
            &x0.rows(0, 4).into_owned()
        )
        .is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_diagonal(&Matrix::identity(4, 4)).unwrap(), 1.0, epsilon = 1e-15);
        let ones = Matrix::from_element(2, 2, 1.0);
        assert_abs_diff_eq!(cosine_diagonal(&ones).unwrap(), 2f64.sqrt() / 2.0, epsilon = 1e-15);
        let hollow = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.0]);
        assert!(matches!(cosine_diagonal(&hollow), Err(Error::ZeroDiagonal)));
    }
}
