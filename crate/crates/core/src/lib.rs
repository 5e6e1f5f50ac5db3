//! Longitudinal prediction with a learned, item-aligned nonlinear
//! preprocessor and an exactly linear decoder.
//!
//! For every follow-up time `t` the baseline items are reconstructed from
//! the follow-up items by least squares, a nonlinear learner maps baseline
//! data onto that reconstruction, and the inverse of the reconstruction
//! matrix decodes the stabilized items into predicted follow-up items. The
//! decoder `β_t` is a single d×d matrix whose rows and columns keep the
//! meaning of the original instrument items.

pub mod data;
pub mod error;
pub mod eval;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use data::{
    load_csv, oracle_mse, save_csv, simulate, DatasetSchema, FollowUp, LongitudinalDataset, MarRule, Nonlinearity,
    OracleHandle, SyntheticSpec,
};
pub use error::{Error, Result};
pub use eval::{
    bootstrap_evaluate, complexity_probe, rate_experiment, EvalConfig, EvaluationReport, ProbeConfig, RateConfig,
    Variant,
};
pub use learner::{fit_learner, predict_learner, FittedLearner, ForestConfig, LearnerKind, LearnerSpec};
pub use linalg::{fit_ols, fit_ridge, invert_square, CoefficientMatrix, ConditionGuard, Matrix};
pub use metrics::{backward_correlation, contribution_matrix, cosine_diagonal, forward_correlation};
pub use model::{fit_time_point, DecoderMode, FitOptions, RefineModel, TimePointModel};
