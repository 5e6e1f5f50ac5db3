//! Pluggable multivariate regressors used as the stabilizing preprocessor.

mod forest;

pub use forest::{ForestConfig, ForestModel, RegressionTree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fit_ols, CoefficientMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RandomForest,
    /// Multivariate OLS; the linear-preprocessor ablation.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Ignored unless `kind` is `RandomForest`.
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn random_forest(forest: ForestConfig, seed: u64) -> Self {
        Self {
            kind: LearnerKind::RandomForest,
            forest,
            seed,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: LearnerKind::Linear,
            forest: ForestConfig::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self::random_forest(ForestConfig::default(), 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerModel {
    Forest(ForestModel),
    Linear(CoefficientMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    model: LearnerModel,
    feature_count: usize,
    target_count: usize,
    /// Every target column was constant at fit time; the learner is a
    /// constant predictor.
    degenerate_targets: bool,
}

impl FittedLearner {
    pub fn model(&self) -> &LearnerModel {
        &self.model
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn degenerate_targets(&self) -> bool {
        self.degenerate_targets
    }
}

pub fn fit_learner(spec: &LearnerSpec, features: &Matrix, targets: &Matrix) -> Result<FittedLearner> {
    if features.nrows() != targets.nrows() {
        return Err(Error::shape(
            "fit_learner",
            format!("{} rows", features.nrows()),
            format!("{} rows", targets.nrows()),
        ));
    }
    if features.ncols() == 0 || targets.ncols() == 0 || features.nrows() == 0 {
        return Err(Error::shape(
            "fit_learner",
            "at least one row, feature and target",
            format!("{}x{} -> {}", features.nrows(), features.ncols(), targets.ncols()),
        ));
    }
    crate::linalg::ensure_finite(features, "learner features")?;
    crate::linalg::ensure_finite(targets, "learner targets")?;
    let degenerate_targets = targets.column_iter().all(|c| c.iter().all(|&v| v == c[0]));
    let model = match spec.kind {
        LearnerKind::RandomForest => {
            LearnerModel::Forest(ForestModel::fit(&spec.forest, spec.seed, features, targets)?)
        }
        LearnerKind::Linear => LearnerModel::Linear(fit_ols(features, targets)?),
    };
    Ok(FittedLearner {
        model,
        feature_count: features.ncols(),
        target_count: targets.ncols(),
        degenerate_targets,
    })
}

pub fn predict_learner(learner: &FittedLearner, features: &Matrix) -> Result<Matrix> {
    if features.ncols() != learner.feature_count {
        return Err(Error::shape("predict_learner", learner.feature_count, features.ncols()));
    }
    if features.nrows() == 0 {
        return Ok(Matrix::zeros(0, learner.target_count));
    }
    crate::linalg::ensure_finite(features, "learner features")?;
    match &learner.model {
        LearnerModel::Forest(f) => f.predict(features),
        LearnerModel::Linear(c) => c.predict(features),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    #[test]
    fn linear_kind_reproduces_linear_targets() {
        let x = Matrix::from_fn(20, 3, |i, j| {
            ((i * 5 + j * 11) % 17) as f64 - 3.0 + (i * j) as f64 * 0.01
        });
        let w = Matrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.5]);
        let y = &x * &w;
        let fitted = fit_learner(&LearnerSpec::linear(), &x, &y).unwrap();
        assert!(max_abs_diff(&predict_learner(&fitted, &x).unwrap(), &y) < 1e-8);
    }

    #[test]
    fn empty_batch_keeps_target_width() {
        let x = Matrix::from_fn(12, 2, |i, j| (i + 3 * j) as f64 + (i * i) as f64 * 0.1);
        let y = Matrix::from_fn(12, 4, |i, j| (i * j) as f64);
        let fitted = fit_learner(&LearnerSpec::default(), &x, &y).unwrap();
        let out = predict_learner(&fitted, &Matrix::zeros(0, 2)).unwrap();
        assert_eq!(out.shape(), (0, 4));
    }

    #[test]
    fn single_point_forest() {
        let x = Matrix::from_row_slice(1, 2, &[0.3, -1.0]);
        let y = Matrix::from_row_slice(1, 2, &[7.0, 2.5]);
        let fitted = fit_learner(&LearnerSpec::default(), &x, &y).unwrap();
        let pred = predict_learner(&fitted, &Matrix::from_row_slice(2, 2, &[5.0, 5.0, -3.0, 0.0])).unwrap();
        for i in 0..2 {
            assert_eq!(pred[(i, 0)], 7.0);
            assert_eq!(pred[(i, 1)], 2.5);
        }
        assert!(fitted.degenerate_targets());
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(5, 2);
        let y = Matrix::zeros(4, 1);
        assert!(matches!(
            fit_learner(&LearnerSpec::default(), &x, &y),
            Err(Error::ShapeMismatch { .. })
        ));
        let fitted = fit_learner(
            &LearnerSpec::default(),
            &Matrix::from_fn(10, 2, |i, j| (i + j) as f64),
            &Matrix::from_fn(10, 1, |i, _| i as f64),
        )
        .unwrap();
        assert!(predict_learner(&fitted, &Matrix::zeros(3, 3)).is_err());
    }
}
