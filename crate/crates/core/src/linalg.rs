//! Dense linear-algebra kernel: centered least squares, ridge regression and
//! guarded inversion of small square matrices.
//!
//! All fitters center predictors and targets with their training means and
//! keep those means so that [`CoefficientMatrix::predict`] works on raw data.
//! There is never an explicit intercept column.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major semantics: rows are subjects, columns are variables.
pub type Matrix = DMatrix<f64>;

/// Condition-number guard shared by the least-squares and inversion routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionGuard {
    /// Largest admissible condition number. For least squares this applies
    /// to the centered Gram matrix, for inversion to the matrix itself.
    pub max_condition: f64,
}

impl Default for ConditionGuard {
    fn default() -> Self {
        Self { max_condition: 1e12 }
    }
}

/// Linear map fitted on centered data, together with the centering means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    values: Matrix,
    predictor_means: Vec<f64>,
    target_means: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn new(values: Matrix, predictor_means: Vec<f64>, target_means: Vec<f64>) -> Result<Self> {
        if predictor_means.len() != values.nrows() {
            return Err(Error::shape(
                "coefficient predictor means",
                values.nrows(),
                predictor_means.len(),
            ));
        }
        if target_means.len() != values.ncols() {
            return Err(Error::shape(
                "coefficient target means",
                values.ncols(),
                target_means.len(),
            ));
        }
        if !all_finite(values.as_slice()) || !all_finite(&predictor_means) || !all_finite(&target_means) {
            return Err(Error::NonFinite {
                context: "coefficient matrix",
            });
        }
        Ok(Self {
            values,
            predictor_means,
            target_means,
        })
    }

    /// Predictors × targets coefficient block.
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn predictor_means(&self) -> &[f64] {
        &self.predictor_means
    }

    pub fn target_means(&self) -> &[f64] {
        &self.target_means
    }

    pub fn n_predictors(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.values.ncols()
    }

    /// `(x - x̄) B + ȳ`, row by row.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.n_predictors() {
            return Err(Error::shape("linear predict", self.n_predictors(), x.ncols()));
        }
        let mut centered = x.clone();
        subtract_row(&mut centered, &self.predictor_means);
        let mut out = centered * &self.values;
        add_row(&mut out, &self.target_means);
        Ok(out)
    }
}

/// Centered multivariate ordinary least squares of `y` on `x` with the default guard.
pub fn fit_ols(x: &Matrix, y: &Matrix) -> Result<CoefficientMatrix> {
    fit_ols_guarded(x, y, ConditionGuard::default())
}

pub fn fit_ols_guarded(x: &Matrix, y: &Matrix, guard: ConditionGuard) -> Result<CoefficientMatrix> {
    let (xc, x_means, yc, y_means) = center_pair(x, y, "ols")?;
    let gram = xc.tr_mul(&xc);
    let condition = spd_condition(&gram);
    if condition.is_nan() || condition > guard.max_condition {
        return Err(Error::RankDeficient {
            condition,
            limit: guard.max_condition,
        });
    }
    let rhs = xc.tr_mul(&yc);
    let values = cholesky(gram, guard)?.solve(&rhs);
    CoefficientMatrix::new(values, x_means, y_means)
}

/// Ridge regression on centered data: argmin ‖Yᶜ − XᶜB‖² + λ‖B‖²_F.
pub fn fit_ridge(x: &Matrix, y: &Matrix, lambda: f64) -> Result<CoefficientMatrix> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "ridge penalty must be finite and non-negative, got {lambda}"
        )));
    }
    let (xc, x_means, yc, y_means) = center_pair(x, y, "ridge")?;
    let mut gram = xc.tr_mul(&xc);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let values = match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => {
            return Err(Error::RankDeficient {
                condition: spd_condition(&gram),
                limit: ConditionGuard::default().max_condition,
            })
        }
    };
    CoefficientMatrix::new(values, x_means, y_means)
}

/// Inverse of a square matrix with the default guard.
pub fn invert_square(m: &Matrix) -> Result<Matrix> {
    invert_square_guarded(m, ConditionGuard::default())
}

pub fn invert_square_guarded(m: &Matrix, guard: ConditionGuard) -> Result<Matrix> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::shape(
            "invert_square",
            "non-empty square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    ensure_finite(m, "invert_square")?;
    let condition = condition_number(m);
    if condition.is_nan() || condition > guard.max_condition {
        return Err(Error::Singular {
            condition,
            limit: guard.max_condition,
        });
    }
    m.clone().lu().try_inverse().ok_or(Error::Singular {
        condition: f64::INFINITY,
        limit: guard.max_condition,
    })
}

/// Tikhonov-regularized inverse `(MᵀM + λI)⁻¹Mᵀ`. Biased towards zero for
/// λ > 0; equals `M⁻¹` at λ = 0 when `M` is invertible.
pub fn invert_regularized(m: &Matrix, lambda: f64) -> Result<Matrix> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::shape(
            "invert_regularized",
            "non-empty square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "inversion ridge must be finite and non-negative, got {lambda}"
        )));
    }
    ensure_finite(m, "invert_regularized")?;
    let mut normal = m.tr_mul(m);
    for i in 0..normal.nrows() {
        normal[(i, i)] += lambda;
    }
    let chol = Cholesky::new(normal.clone()).ok_or(Error::Singular {
        condition: spd_condition(&normal),
        limit: ConditionGuard::default().max_condition,
    })?;
    Ok(chol.solve(&m.transpose()))
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number of a symmetric positive semi-definite matrix.
fn spd_condition(gram: &Matrix) -> f64 {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min.is_nan() || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn cholesky(gram: Matrix, guard: ConditionGuard) -> Result<Cholesky<f64, Dyn>> {
    let fallback = spd_condition(&gram);
    Cholesky::new(gram).ok_or(Error::RankDeficient {
        condition: fallback,
        limit: guard.max_condition,
    })
}

type Centered = (Matrix, Vec<f64>, Matrix, Vec<f64>);

fn center_pair(x: &Matrix, y: &Matrix, context: &'static str) -> Result<Centered> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape(
            context,
            format!("{} rows", x.nrows()),
            format!("{} rows", y.nrows()),
        ));
    }
    if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::shape(
            context,
            "non-empty design and targets",
            format!("{}x{} on {}x{}", y.nrows(), y.ncols(), x.nrows(), x.ncols()),
        ));
    }
    ensure_finite(x, context)?;
    ensure_finite(y, context)?;
    let x_means = column_means(x);
    let y_means = column_means(y);
    let mut xc = x.clone();
    subtract_row(&mut xc, &x_means);
    let mut yc = y.clone();
    subtract_row(&mut yc, &y_means);
    Ok((xc, x_means, yc, y_means))
}

pub fn column_means(m: &Matrix) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

pub(crate) fn subtract_row(m: &mut Matrix, row: &[f64]) {
    for (mut col, &mu) in m.column_iter_mut().zip(row) {
        col.add_scalar_mut(-mu);
    }
}

pub(crate) fn add_row(m: &mut Matrix, row: &[f64]) {
    for (mut col, &mu) in m.column_iter_mut().zip(row) {
        col.add_scalar_mut(mu);
    }
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub(crate) fn ensure_finite(m: &Matrix, context: &'static str) -> Result<()> {
    if all_finite(m.as_slice()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

/// Side-by-side concatenation `[a, b]`.
pub fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape("hstack", a.nrows(), b.nrows()));
    }
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    Ok(out)
}

/// Rows of `m` at `indices`, in order, repeats allowed.
pub fn select_rows(m: &Matrix, indices: &[usize]) -> Matrix {
    Matrix::from_fn(indices.len(), m.ncols(), |i, j| m[(indices[i], j)])
}

/// Largest absolute entry-wise difference.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
