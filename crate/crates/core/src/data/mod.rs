//! Longitudinal datasets: schema, in-memory layout, CSV ingestion and the
//! synthetic generator with its closed-form oracle.

mod csv_io;
mod sim;

pub use csv_io::{load_csv, load_schema, save_csv, save_schema, IngestReport};
pub use sim::{oracle_mse, simulate, MarRule, Nonlinearity, OracleHandle, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hstack, select_rows, Matrix};

/// Item, covariate and follow-up layout shared by datasets and models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub item_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Follow-up labels, strictly increasing.
    pub time_labels: Vec<u32>,
}

impl DatasetSchema {
    pub fn new(item_names: Vec<String>, covariate_names: Vec<String>, time_labels: Vec<u32>) -> Result<Self> {
        let schema = Self {
            item_names,
            covariate_names,
            time_labels,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Generic `item1..itemd`, `cov1..covq` names.
    pub fn generic(d: usize, q: usize, time_labels: Vec<u32>) -> Result<Self> {
        Self::new(
            (1..=d).map(|i| format!("item{i}")).collect(),
            (1..=q).map(|i| format!("cov{i}")).collect(),
            time_labels,
        )
    }

    pub fn d(&self) -> usize {
        self.item_names.len()
    }

    pub fn q(&self) -> usize {
        self.covariate_names.len()
    }

    /// Input dimension of the preprocessor, `d + q`.
    pub fn p(&self) -> usize {
        self.d() + self.q()
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_names.is_empty() {
            return Err(Error::SchemaMismatch("at least one item is required".into()));
        }
        if self.time_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::SchemaMismatch(format!(
                "time labels must be strictly increasing: {:?}",
                self.time_labels
            )));
        }
        let mut names: Vec<&String> = self.item_names.iter().collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SchemaMismatch("duplicate item name".into()));
        }
        let mut covs: Vec<&String> = self.covariate_names.iter().collect();
        covs.sort();
        if covs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SchemaMismatch("duplicate covariate name".into()));
        }
        Ok(())
    }
}

/// Follow-up block at one time point. Rows with `observed[i] == false`
/// carry no values (NaN).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FollowUp {
    pub label: u32,
    pub values: Matrix,
    pub observed: Vec<bool>,
}

/// Masked rows compare equal regardless of their placeholder contents.
impl PartialEq for FollowUp {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.observed == other.observed
            && self.values.shape() == other.values.shape()
            && self
                .observed_rows()
                .into_iter()
                .all(|i| self.values.row(i) == other.values.row(i))
    }
}

impl FollowUp {
    /// Fully observed block.
    pub fn complete(label: u32, values: Matrix) -> Self {
        let observed = vec![true; values.nrows()];
        Self {
            label,
            values,
            observed,
        }
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&i| self.observed[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    schema: DatasetSchema,
    subject_ids: Vec<String>,
    x0: Matrix,
    z: Matrix,
    followups: Vec<FollowUp>,
}

impl LongitudinalDataset {
    pub fn new(
        schema: DatasetSchema,
        subject_ids: Vec<String>,
        x0: Matrix,
        z: Matrix,
        mut followups: Vec<FollowUp>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = x0.nrows();
        let (d, q) = (schema.d(), schema.q());
        if subject_ids.len() != n {
            return Err(Error::shape("subject ids", n, subject_ids.len()));
        }
        if x0.ncols() != d {
            return Err(Error::shape("baseline items", d, x0.ncols()));
        }
        if z.shape() != (n, q) {
            return Err(Error::shape(
                "covariates",
                format!("{n}x{q}"),
                format!("{}x{}", z.nrows(), z.ncols()),
            ));
        }
        crate::linalg::ensure_finite(&x0, "baseline items")?;
        crate::linalg::ensure_finite(&z, "covariates")?;
        let labels: Vec<u32> = followups.iter().map(|f| f.label).collect();
        if labels != schema.time_labels {
            return Err(Error::SchemaMismatch(format!(
                "follow-up labels {labels:?} differ from schema {:?}",
                schema.time_labels
            )));
        }
        for fu in &mut followups {
            if fu.values.shape() != (n, d) || fu.observed.len() != n {
                return Err(Error::shape(
                    "follow-up block",
                    format!("{n}x{d}"),
                    format!(
                        "{}x{} with {} mask entries",
                        fu.values.nrows(),
                        fu.values.ncols(),
                        fu.observed.len()
                    ),
                ));
            }
            for i in 0..n {
                if fu.observed[i] {
                    if fu.values.row(i).iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite {
                            context: "observed follow-up row",
                        });
                    }
                } else {
                    fu.values.row_mut(i).fill(f64::NAN);
                }
            }
        }
        Ok(Self {
            schema,
            subject_ids,
            x0,
            z,
            followups,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn x0(&self) -> &Matrix {
        &self.x0
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn followups(&self) -> &[FollowUp] {
        &self.followups
    }

    pub fn followup(&self, label: u32) -> Option<&FollowUp> {
        self.followups.iter().find(|f| f.label == label)
    }

    /// Preprocessor inputs `[X0, Z]`.
    pub fn features(&self) -> Matrix {
        hstack(&self.x0, &self.z).expect("row counts agree by construction")
    }

    /// Subset (or resample, when indices repeat) of subjects.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            x0: select_rows(&self.x0, indices),
            z: select_rows(&self.z, indices),
            followups: self
                .followups
                .iter()
                .map(|f| FollowUp {
                    label: f.label,
                    values: select_rows(&f.values, indices),
                    observed: indices.iter().map(|&i| f.observed[i]).collect(),
                })
                .collect(),
        }
    }

    /// Same subjects and baseline with replaced follow-up blocks.
    pub fn with_followups(&self, followups: Vec<FollowUp>) -> Result<Self> {
        Self::new(
            self.schema.clone(),
            self.subject_ids.clone(),
            self.x0.clone(),
            self.z.clone(),
            followups,
        )
    }
}
