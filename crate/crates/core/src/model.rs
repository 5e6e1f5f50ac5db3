//! Two-stage fitting and prediction.
//!
//! Per follow-up time `t`, on the subjects observed at `t`:
//!
//! 1. regress baseline items on follow-up items, `X0 ≈ X_t B_t`, and keep the
//!    fitted values `X_t B_t` as the follow-up-informed proxy of `X0`;
//! 2. set the decoder `β_t = B_t⁻¹` (or, for the ablation, refit it by OLS of
//!    `X_t` on in-sample stabilized features);
//! 3. fit the preprocessor `h_t : (X0, Z) ↦ proxy` with the configured learner.
//!
//! Prediction is `h_t(X0, Z) β_t` with centering handled by the stored means,
//! so it depends on baseline inputs only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::learner::{fit_learner, predict_learner, FittedLearner, LearnerSpec};
use crate::linalg::{
    column_means, fit_ols_guarded, hstack, invert_regularized, invert_square_guarded, select_rows, CoefficientMatrix,
    ConditionGuard, Matrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// `β_t = B_t⁻¹`.
    Invert,
    /// Same-sample OLS of `X_t` on the fitted stabilized features.
    RefitOls,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub guard: ConditionGuard,
    /// Replace `B_t⁻¹` by the Tikhonov inverse `(BᵀB + λI)⁻¹Bᵀ`. Biases the
    /// decoder; off by default.
    pub inversion_ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointModel {
    label: u32,
    reconstruction: CoefficientMatrix,
    decoder: CoefficientMatrix,
    preprocessor: FittedLearner,
    decoder_mode: DecoderMode,
    n_complete: usize,
}

impl TimePointModel {
    pub fn label(&self) -> u32 {
        self.label
    }

    /// `B_t` with its centering means (follow-up means in, baseline means out).
    pub fn reconstruction(&self) -> &CoefficientMatrix {
        &self.reconstruction
    }

    /// `β_t`: rows are stabilized baseline items, columns follow-up items.
    pub fn beta(&self) -> &Matrix {
        self.decoder.values()
    }

    pub fn decoder(&self) -> &CoefficientMatrix {
        &self.decoder
    }

    pub fn preprocessor(&self) -> &FittedLearner {
        &self.preprocessor
    }

    pub fn decoder_mode(&self) -> DecoderMode {
        self.decoder_mode
    }

    pub fn n_complete(&self) -> usize {
        self.n_complete
    }

    /// `max |B_t β_t − I|`.
    pub fn anchoring_error(&self) -> f64 {
        let prod = self.reconstruction.values() * self.beta();
        let d = prod.nrows();
        (prod - Matrix::identity(d, d)).amax()
    }

    pub fn preprocess(&self, features: &Matrix) -> Result<Matrix> {
        predict_learner(&self.preprocessor, features)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        let stabilized = self.preprocess(features)?;
        if stabilized.nrows() == 0 {
            return Ok(stabilized);
        }
        self.decoder.predict(&stabilized)
    }
}

/// Follow-up-informed proxy: OLS of `x0` on `xt`, returning `B_t` and the
/// fitted values in baseline item units.
pub fn follow_up_proxy(x0: &Matrix, xt: &Matrix, guard: ConditionGuard) -> Result<(CoefficientMatrix, Matrix)> {
    let b = fit_ols_guarded(xt, x0, guard)?;
    let proxy = b.predict(xt)?;
    Ok((b, proxy))
}

/// Fits one time point on the rows where `mask` is true (all rows when
/// `None`). Masked rows of `xt` are never read.
#[allow(clippy::too_many_arguments)]
pub fn fit_time_point(
    label: u32,
    x0: &Matrix,
    z: &Matrix,
    xt: &Matrix,
    mask: Option<&[bool]>,
    spec: &LearnerSpec,
    mode: DecoderMode,
    options: &FitOptions,
) -> Result<TimePointModel> {
    let n = x0.nrows();
    let d = x0.ncols();
    if z.nrows() != n || xt.nrows() != n {
        return Err(Error::shape(
            "fit_time_point",
            format!("{n} rows"),
            format!("{} covariate rows, {} follow-up rows", z.nrows(), xt.nrows()),
        ));
    }
    if xt.ncols() != d {
        return Err(Error::shape("fit_time_point follow-up items", d, xt.ncols()));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::shape("fit_time_point mask", n, m.len()));
        }
    }
    let rows: Vec<usize> = match mask {
        Some(m) => (0..n).filter(|&i| m[i]).collect(),
        None => (0..n).collect(),
    };
    if rows.len() <= d {
        return Err(Error::InsufficientData {
            available: rows.len(),
            required: d,
        });
    }
    let x0_cc = select_rows(x0, &rows);
    let xt_cc = select_rows(xt, &rows);
    let features = hstack(&x0_cc, &select_rows(z, &rows))?;

    let (reconstruction, proxy) = follow_up_proxy(&x0_cc, &xt_cc, options.guard)?;
    let preprocessor = fit_learner(spec, &features, &proxy)?;
    let decoder = match mode {
        DecoderMode::Invert => {
            let beta = match options.inversion_ridge {
                None => invert_square_guarded(reconstruction.values(), options.guard)?,
                Some(lambda) => invert_regularized(reconstruction.values(), lambda)?,
            };
            CoefficientMatrix::new(beta, column_means(&proxy), column_means(&xt_cc))?
        }
        DecoderMode::RefitOls => {
            let stabilized = predict_learner(&preprocessor, &features)?;
            fit_ols_guarded(&stabilized, &xt_cc, options.guard)?
        }
    };
    Ok(TimePointModel {
        label,
        reconstruction,
        decoder,
        preprocessor,
        decoder_mode: mode,
        n_complete: rows.len(),
    })
}

/// Fitted models for every follow-up time of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineModel {
    schema: DatasetSchema,
    learner_spec: LearnerSpec,
    decoder_mode: DecoderMode,
    time_models: Vec<TimePointModel>,
}

const MAGIC: &[u8; 8] = b"REFINEMD";
const FORMAT_VERSION: u32 = 1;

impl RefineModel {
    pub fn fit(dataset: &LongitudinalDataset, spec: &LearnerSpec, mode: DecoderMode) -> Result<Self> {
        Self::fit_with(dataset, spec, mode, &FitOptions::default())
    }

    /// Time points are fitted independently of each other.
    pub fn fit_with(
        dataset: &LongitudinalDataset,
        spec: &LearnerSpec,
        mode: DecoderMode,
        options: &FitOptions,
    ) -> Result<Self> {
        if dataset.followups().is_empty() {
            return Err(Error::InvalidSpec("dataset has no follow-up time points".into()));
        }
        let time_models = dataset
            .followups()
            .iter()
            .map(|fu| {
                fit_time_point(
                    fu.label,
                    dataset.x0(),
                    dataset.z(),
                    &fu.values,
                    Some(&fu.observed),
                    spec,
                    mode,
                    options,
                )
                .map_err(|e| Error::AtTimePoint {
                    label: fu.label,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema: dataset.schema().clone(),
            learner_spec: spec.clone(),
            decoder_mode: mode,
            time_models,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn learner_spec(&self) -> &LearnerSpec {
        &self.learner_spec
    }

    pub fn decoder_mode(&self) -> DecoderMode {
        self.decoder_mode
    }

    pub fn time_models(&self) -> &[TimePointModel] {
        &self.time_models
    }

    pub fn time_model(&self, label: u32) -> Result<&TimePointModel> {
        self.time_models
            .iter()
            .find(|m| m.label == label)
            .ok_or(Error::UnknownTimePoint(label))
    }

    fn features(&self, x0: &Matrix, z: &Matrix) -> Result<Matrix> {
        if x0.ncols() != self.schema.d() {
            return Err(Error::shape("baseline items", self.schema.d(), x0.ncols()));
        }
        if z.ncols() != self.schema.q() {
            return Err(Error::shape("covariates", self.schema.q(), z.ncols()));
        }
        hstack(x0, z)
    }

    /// Stabilized, item-aligned baseline representation `ĥ_t(X0, Z)`.
    pub fn preprocess(&self, label: u32, x0: &Matrix, z: &Matrix) -> Result<Matrix> {
        let model = self.time_model(label)?;
        model.preprocess(&self.features(x0, z)?)
    }

    /// Predicted follow-up items `ĥ_t(X0, Z) β_t`.
    pub fn predict(&self, label: u32, x0: &Matrix, z: &Matrix) -> Result<Matrix> {
        let model = self.time_model(label)?;
        model.predict(&self.features(x0, z)?)
    }

    /// The global interpretive object `β_t`.
    pub fn coefficient_matrix(&self, label: u32) -> Result<&Matrix> {
        Ok(self.time_model(label)?.beta())
    }

    pub fn to_writer(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut w, self).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(())
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("not a model file".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        bincode::deserialize_from(r).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path.as_ref())?))
    }
}
