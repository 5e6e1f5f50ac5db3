use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::learner::{ForestConfig, LearnerKind, LearnerSpec};
use crate::linalg::{select_rows, Matrix};
use crate::metrics::{
    backward_correlation_with, contribution_matrix, cosine_diagonal, forward_correlation_with, Aggregation, MetricName,
};
use crate::model::{fit_time_point, DecoderMode, FitOptions, TimePointModel};

/// One learner × decoder combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub learner: LearnerKind,
    pub decoder: DecoderMode,
}

impl Variant {
    pub const REFINE: Variant = Variant {
        learner: LearnerKind::RandomForest,
        decoder: DecoderMode::Invert,
    };
    /// Linear preprocessor; collapses to a single OLS map.
    pub const LINEAR_PREPROCESSOR: Variant = Variant {
        learner: LearnerKind::Linear,
        decoder: DecoderMode::Invert,
    };
    /// Decoder refitted by OLS instead of inverting `B_t`.
    pub const OLS_DECODER: Variant = Variant {
        learner: LearnerKind::RandomForest,
        decoder: DecoderMode::RefitOls,
    };

    pub fn ablations() -> Vec<Variant> {
        vec![Self::REFINE, Self::OLS_DECODER, Self::LINEAR_PREPROCESSOR]
    }

    pub fn name(&self) -> &'static str {
        match (self.learner, self.decoder) {
            (LearnerKind::RandomForest, DecoderMode::Invert) => "refine",
            (LearnerKind::RandomForest, DecoderMode::RefitOls) => "ols_decoder",
            (LearnerKind::Linear, DecoderMode::Invert) => "linear_preprocessor",
            (LearnerKind::Linear, DecoderMode::RefitOls) => "linear_ols_decoder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricToggles {
    pub forward: bool,
    pub backward: bool,
    pub cosine: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            forward: true,
            backward: true,
            cosine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_boot: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub forest: ForestConfig,
    pub metrics: MetricToggles,
    /// Ridge penalty of the backward reconstruction, on standardized
    /// follow-up items.
    pub ridge_lambda: f64,
    pub aggregation: Aggregation,
    pub fit: FitOptions,
    /// Resamples with an empty out-of-bag set are redrawn at most this many
    /// times per replicate.
    pub max_redraws: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_boot: 100,
            seed: 0,
            variants: vec![Variant::REFINE],
            forest: ForestConfig::default(),
            metrics: MetricToggles::default(),
            ridge_lambda: 1.0,
            aggregation: Aggregation::ItemMean,
            fit: FitOptions::default(),
            max_redraws: 1000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot == 0 {
            return Err(Error::InvalidSpec("n_boot must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidSpec("at least one variant is required".into()));
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::InvalidSpec("ridge_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateValue {
    pub replicate: usize,
    /// `None` when the metric is undefined for this replicate (for example an
    /// all-zero contribution diagonal).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricName,
    pub values: Vec<ReplicateValue>,
    pub n_defined: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub p025: Option<f64>,
    pub p975: Option<f64>,
}

impl MetricSummary {
    fn new(metric: MetricName, values: Vec<ReplicateValue>) -> Self {
        let defined: Vec<f64> = values.iter().filter_map(|v| v.value).collect();
        let k = defined.len();
        let mean = (k > 0).then(|| defined.iter().sum::<f64>() / k as f64);
        let sd = (k > 1).then(|| {
            let m = mean.unwrap();
            (defined.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        });
        let mut sorted = defined.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            metric,
            values,
            n_defined: k,
            mean,
            sd,
            p025: percentile(&sorted, 0.025),
            p975: percentile(&sorted, 0.975),
        }
    }
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Everything recorded for one (variant, time point) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: String,
    pub time: u32,
    /// Resamples drawn, including redrawn ones.
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub redrawn: usize,
    pub failures: Vec<(usize, String)>,
    /// Items skipped by the correlation metrics, summed over replicates.
    pub skipped_items: usize,
    pub metrics: Vec<MetricSummary>,
}

impl CellSummary {
    pub fn metric(&self, name: MetricName) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub redraws: usize,
    pub out_of_bag: usize,
    pub learner_seed: u64,
}

/// Wall-clock seconds per variant and replicate. Kept out of the main report
/// so that report serialization is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: BTreeMap<String, Vec<f64>>,
    pub eval_seconds: BTreeMap<String, Vec<f64>>,
}

impl Timings {
    pub fn mean_train_seconds(&self, variant: &str) -> Option<f64> {
        self.train_seconds
            .get(variant)
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvalConfig,
    pub seed: u64,
    pub n_subjects: usize,
    pub time_labels: Vec<u32>,
    pub replicates: Vec<ReplicateRecord>,
    pub cells: Vec<CellSummary>,
    #[serde(skip)]
    pub timings: Timings,
}

impl EvaluationReport {
    pub fn cell(&self, variant: Variant, time: u32) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.variant == variant.name() && c.time == time)
    }

    pub fn mean(&self, variant: Variant, time: u32, metric: MetricName) -> Option<f64> {
        self.cell(variant, time)?.metric(metric)?.mean
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn write_timings_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.timings)?)?;
        Ok(())
    }

    /// Long format: variant, time, metric, replicate, value. Undefined values
    /// are written as empty cells.
    pub fn write_metrics_csv(&self, variant: &str, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["variant", "time", "metric", "replicate", "value"])?;
        for cell in self.cells.iter().filter(|c| c.variant == variant) {
            for m in &cell.metrics {
                for v in &m.values {
                    w.write_record([
                        cell.variant.clone(),
                        cell.time.to_string(),
                        m.metric.as_str().to_owned(),
                        v.replicate.to_string(),
                        v.value.map(|x| x.to_string()).unwrap_or_default(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean forward and backward correlation per variant and time.
    pub fn write_frontier_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["variant", "time", "forward_mean", "backward_mean"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for cell in &self.cells {
            w.write_record([
                cell.variant.clone(),
                cell.time.to_string(),
                fmt(cell.metric(MetricName::ForwardCorrelation).and_then(|m| m.mean)),
                fmt(cell.metric(MetricName::BackwardCorrelation).and_then(|m| m.mean)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `timings.json`, `frontier.csv` and one
    /// `metrics_<variant>.csv` per variant into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_json(dir.join("report.json"))?;
        self.write_timings_json(dir.join("timings.json"))?;
        self.write_frontier_csv(dir.join("frontier.csv"))?;
        for v in &self.config.variants {
            self.write_metrics_csv(v.name(), dir.join(format!("metrics_{}.csv", v.name())))?;
        }
        let mut f = File::create(dir.join(".complete"))?;
        f.write_all(b"")?;
        Ok(())
    }
}

#[derive(Default)]
struct CellOutcome {
    failure: Option<String>,
    forward: Option<f64>,
    backward: Option<f64>,
    cosine: Option<f64>,
    skipped_items: usize,
}

struct ReplicateOutcome {
    record: ReplicateRecord,
    /// Indexed `[variant][time]`.
    cells: Vec<Vec<CellOutcome>>,
    train_seconds: Vec<f64>,
    eval_seconds: Vec<f64>,
}

/// Bootstrap out-of-bag evaluation. Replicate `r` draws its resample from
/// ChaCha stream `r` of `config.seed`; every variant of a replicate shares
/// the resample and the learner seed.
pub fn bootstrap_evaluate(dataset: &LongitudinalDataset, config: &EvalConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let n = dataset.n();
    if n < 2 {
        return Err(Error::InsufficientData {
            available: n,
            required: 1,
        });
    }
    let outcomes: Vec<ReplicateOutcome> = (0..config.n_boot)
        .into_par_iter()
        .map(|r| run_replicate(dataset, config, r))
        .collect::<Result<_>>()?;

    let labels = dataset.schema().time_labels.clone();
    let mut cells = Vec::new();
    let total_redraws: usize = outcomes.iter().map(|o| o.record.redraws).sum();
    for (vi, variant) in config.variants.iter().enumerate() {
        for (ti, &label) in labels.iter().enumerate() {
            let mut failures = Vec::new();
            let mut skipped = 0;
            let mut series: BTreeMap<MetricName, Vec<ReplicateValue>> = BTreeMap::new();
            for o in &outcomes {
                let c = &o.cells[vi][ti];
                let replicate = o.record.replicate;
                if let Some(reason) = &c.failure {
                    failures.push((replicate, reason.clone()));
                    continue;
                }
                skipped += c.skipped_items;
                let mut push = |name, on: bool, value| {
                    if on {
                        series
                            .entry(name)
                            .or_default()
                            .push(ReplicateValue { replicate, value });
                    }
                };
                push(MetricName::ForwardCorrelation, config.metrics.forward, c.forward);
                push(MetricName::BackwardCorrelation, config.metrics.backward, c.backward);
                push(MetricName::CosineDiagonal, config.metrics.cosine, c.cosine);
            }
            cells.push(CellSummary {
                variant: variant.name().to_owned(),
                time: label,
                attempted: config.n_boot + total_redraws,
                succeeded: config.n_boot - failures.len(),
                failed: failures.len(),
                redrawn: total_redraws,
                failures,
                skipped_items: skipped,
                metrics: series
                    .into_iter()
                    .map(|(name, values)| MetricSummary::new(name, values))
                    .collect(),
            });
        }
    }
    let mut timings = Timings::default();
    for (vi, variant) in config.variants.iter().enumerate() {
        timings.train_seconds.insert(
            variant.name().to_owned(),
            outcomes.iter().map(|o| o.train_seconds[vi]).collect(),
        );
        timings.eval_seconds.insert(
            variant.name().to_owned(),
            outcomes.iter().map(|o| o.eval_seconds[vi]).collect(),
        );
    }
    Ok(EvaluationReport {
        config: config.clone(),
        seed: config.seed,
        n_subjects: n,
        time_labels: labels,
        replicates: outcomes.into_iter().map(|o| o.record).collect(),
        cells,
        timings,
    })
}

/// In-bag draw and out-of-bag complement for replicate `r`.
pub(crate) fn draw_resample(
    seed: u64,
    replicate: usize,
    n: usize,
    max_redraws: usize,
) -> Result<(Vec<usize>, Vec<usize>, usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    for redraws in 0..=max_redraws {
        let in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut drawn = vec![false; n];
        for &i in &in_bag {
            drawn[i] = true;
        }
        let oob: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();
        if !oob.is_empty() {
            return Ok((in_bag, oob, redraws, rng.next_u64()));
        }
    }
    Err(Error::InvalidSpec(format!(
        "replicate {replicate}: no out-of-bag subject after {max_redraws} redraws"
    )))
}

fn run_replicate(dataset: &LongitudinalDataset, config: &EvalConfig, r: usize) -> Result<ReplicateOutcome> {
    let (in_idx, oob_idx, redraws, learner_seed) = draw_resample(config.seed, r, dataset.n(), config.max_redraws)?;
    let train = dataset.select(&in_idx);
    let test = dataset.select(&oob_idx);
    let train_features = train.features();
    let test_features = test.features();

    let mut cells = Vec::with_capacity(config.variants.len());
    let mut train_seconds = Vec::new();
    let mut eval_seconds = Vec::new();
    for variant in &config.variants {
        let spec = LearnerSpec {
            kind: variant.learner,
            forest: config.forest.clone(),
            seed: learner_seed,
        };
        let mut row = Vec::with_capacity(train.followups().len());
        let (mut fit_time, mut eval_time) = (0.0, 0.0);
        for (fu_train, fu_test) in train.followups().iter().zip(test.followups()) {
            let started = Instant::now();
            let fitted = fit_time_point(
                fu_train.label,
                train.x0(),
                train.z(),
                &fu_train.values,
                Some(&fu_train.observed),
                &spec,
                variant.decoder,
                &config.fit,
            );
            fit_time += started.elapsed().as_secs_f64();
            let started = Instant::now();
            let outcome = match fitted {
                Err(e) => CellOutcome {
                    failure: Some(e.to_string()),
                    ..Default::default()
                },
                Ok(model) => score(
                    &model,
                    config,
                    (&train_features, fu_train),
                    (&test, &test_features, fu_test),
                )
                .unwrap_or_else(|e| CellOutcome {
                    failure: Some(e.to_string()),
                    ..Default::default()
                }),
            };
            eval_time += started.elapsed().as_secs_f64();
            row.push(outcome);
        }
        cells.push(row);
        train_seconds.push(fit_time);
        eval_seconds.push(eval_time);
    }
    Ok(ReplicateOutcome {
        record: ReplicateRecord {
            replicate: r,
            redraws,
            out_of_bag: oob_idx.len(),
            learner_seed,
        },
        cells,
        train_seconds,
        eval_seconds,
    })
}

fn score(
    model: &TimePointModel,
    config: &EvalConfig,
    (train_features, fu_train): (&Matrix, &crate::data::FollowUp),
    (test, test_features, fu_test): (&LongitudinalDataset, &Matrix, &crate::data::FollowUp),
) -> Result<CellOutcome> {
    let mut out = CellOutcome::default();
    let predictions = model.predict(test_features)?;
    let obs_rows = fu_test.observed_rows();
    let enough = obs_rows.len() >= 3;

    if config.metrics.forward && enough {
        let pred = select_rows(&predictions, &obs_rows);
        let obs = select_rows(&fu_test.values, &obs_rows);
        match forward_correlation_with(&pred, &obs, config.aggregation) {
            Ok(s) => {
                out.forward = Some(s.value);
                out.skipped_items += s.skipped_items;
            }
            Err(Error::AllColumnsConstant) => {}
            Err(e) => return Err(e),
        }
    }
    if config.metrics.backward && enough {
        let train_rows = fu_train.observed_rows();
        let derived_train = model.preprocess(&select_rows(train_features, &train_rows))?;
        let xt_train = select_rows(&fu_train.values, &train_rows);
        let derived_test = model.preprocess(&select_rows(test_features, &obs_rows))?;
        let xt_test = select_rows(&fu_test.values, &obs_rows);
        match backward_correlation_with(
            &derived_train,
            &xt_train,
            &derived_test,
            &xt_test,
            config.ridge_lambda,
            config.aggregation,
        ) {
            Ok(s) => {
                out.backward = Some(s.value);
                out.skipped_items += s.skipped_items;
            }
            Err(Error::AllColumnsConstant) => {}
            Err(e) => return Err(e),
        }
    }
    if config.metrics.cosine {
        out.cosine = contribution_matrix(test.x0(), test.z(), &predictions)
            .and_then(|m| cosine_diagonal(&m))
            .ok();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_lineage_depends_only_on_seed_and_replicate() {
        let a = draw_resample(5, 3, 50, 10).unwrap();
        let b = draw_resample(5, 3, 50, 10).unwrap();
        assert_eq!(a, b);
        let c = draw_resample(5, 4, 50, 10).unwrap();
        assert_ne!(a.0, c.0);
        let (in_bag, oob, _, _) = a;
        assert!(oob.iter().all(|i| !in_bag.contains(i)));
    }

    #[test]
    fn single_subject_cannot_be_resampled() {
        assert!(draw_resample(0, 0, 1, 5).is_err());
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(5.0));
        assert_eq!(percentile(&v, 0.5), Some(3.0));
        assert!((percentile(&v, 0.025).unwrap() - 1.1).abs() < 1e-12);
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn variant_names() {
        let names: Vec<_> = Variant::ablations().iter().map(|v| v.name()).collect();
        assert_eq!(names, ["refine", "ols_decoder", "linear_preprocessor"]);
    }
}
