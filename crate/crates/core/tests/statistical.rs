use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refine::data::{load_csv, save_csv};
use refine::eval::{bootstrap_evaluate, EvalConfig, MetricToggles, Variant};
use refine::learner::ForestModel;
use refine::linalg::{hstack, max_abs_diff, select_rows};
use refine::metrics::MetricName;
use refine::{
    oracle_mse, simulate, DecoderMode, ForestConfig, LearnerKind, LearnerSpec, MarRule, Matrix, Nonlinearity,
    RefineModel, SyntheticSpec,
};

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    Matrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0))
}

fn step(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn mse(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).map(|v| v * v).mean()
}

#[test]
fn forest_approximates_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = uniform(&mut rng, 2000);
    let forest = ForestModel::fit(&ForestConfig::default(), 3, &x, &step(&x)).unwrap();
    let grid = Matrix::from_fn(1001, 1, |i, _| -1.0 + 0.002 * i as f64);
    let err = mse(&forest.predict(&grid).unwrap(), &step(&grid));
    assert!(err <= 0.02, "held-out mse {err}");
}

#[test]
fn row_order_does_not_change_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Matrix::from_fn(3000, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix::from_fn(3000, 1, |i, _| {
        (3.0 * x[(i, 0)]).sin() + x[(i, 1)] + 0.3 * rng.random::<f64>()
    });
    let mut order: Vec<usize> = (0..3000).collect();
    order.reverse();
    order.swap(10, 2000);
    let grid = Matrix::from_fn(500, 2, |i, j| -1.0 + 0.004 * ((i * (j + 7)) % 500) as f64);
    let truth = Matrix::from_fn(500, 1, |i, _| (3.0 * grid[(i, 0)]).sin() + grid[(i, 1)] + 0.15);
    let config = ForestConfig {
        n_trees: 100,
        ..ForestConfig::default()
    };
    let a = ForestModel::fit(&config, 1, &x, &y).unwrap();
    let b = ForestModel::fit(&config, 1, &select_rows(&x, &order), &select_rows(&y, &order)).unwrap();
    let (ea, eb) = (
        mse(&a.predict(&grid).unwrap(), &truth),
        mse(&b.predict(&grid).unwrap(), &truth),
    );
    assert!((ea - eb).abs() <= 1e-2, "{ea} vs {eb}");
}

#[test]
fn more_trees_reduce_prediction_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Matrix::from_fn(400, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix::from_fn(400, 1, |i, _| x[(i, 0)] * x[(i, 1)] + rng.random_range(-0.5..0.5));
    let probe = Matrix::from_fn(50, 2, |i, j| -0.9 + 0.036 * ((i * (j + 3)) % 50) as f64);
    let spread = |n_trees: usize| {
        let preds: Vec<Matrix> = (0..20)
            .map(|seed| {
                let config = ForestConfig {
                    n_trees,
                    parallel: false,
                    ..ForestConfig::default()
                };
                ForestModel::fit(&config, seed, &x, &y)
                    .unwrap()
                    .predict(&probe)
                    .unwrap()
            })
            .collect();
        let mean = preds.iter().fold(Matrix::zeros(50, 1), |acc, p| acc + p) / 20.0;
        preds.iter().map(|p| mse(p, &mean)).sum::<f64>() / 20.0
    };
    let (few, many) = (spread(5), spread(50));
    assert!(many <= few, "variance with 50 trees {many} exceeds 5 trees {few}");
}

#[test]
fn noiseless_linear_generator_is_recovered() {
    let spec = SyntheticSpec::new(400, 5, 2, 2, Nonlinearity::Linear, 1e-9, 4);
    let (data, oracle) = simulate(&spec).unwrap();
    let model = RefineModel::fit(&data, &LearnerSpec::linear(), DecoderMode::Invert).unwrap();
    for &t in oracle.labels() {
        let pred = model.predict(t, data.x0(), data.z()).unwrap();
        let truth = oracle.conditional_mean(t, data.x0(), data.z()).unwrap();
        assert!(max_abs_diff(&pred, &truth) <= 1e-6);
    }
}

#[test]
fn simulated_noise_is_centered_on_the_oracle() {
    let n = 50_000;
    let noise_sd = 0.5;
    let spec = SyntheticSpec::new(n, 4, 2, 2, Nonlinearity::Tanh, noise_sd, 8);
    let (data, oracle) = simulate(&spec).unwrap();
    for fu in data.followups() {
        let resid = &fu.values - oracle.conditional_mean(fu.label, data.x0(), data.z()).unwrap();
        for col in resid.column_iter() {
            let mean = col.mean();
            assert!(mean.abs() <= 3.0 * noise_sd / (n as f64).sqrt(), "mean residual {mean}");
        }
    }
}

#[test]
fn oracle_matches_binned_sample_means() {
    let n = 40_000;
    let spec = SyntheticSpec::new(n, 2, 1, 1, Nonlinearity::Piecewise, 0.5, 12);
    let (data, oracle) = simulate(&spec).unwrap();
    let fu = &data.followups()[0];
    let truth = oracle.conditional_mean(1, data.x0(), data.z()).unwrap();
    // Bin on the sign pattern of (x0_1, x0_2, z).
    let mut sums = vec![[0.0f64; 4]; 8];
    for i in 0..n {
        let cell = usize::from(data.x0()[(i, 0)] > 0.0)
            | usize::from(data.x0()[(i, 1)] > 0.0) << 1
            | usize::from(data.z()[(i, 0)] > 0.0) << 2;
        sums[cell][0] += fu.values[(i, 0)];
        sums[cell][1] += truth[(i, 0)];
        sums[cell][2] += 1.0;
    }
    for s in &sums {
        let k = s[2];
        assert!(k > 1000.0);
        let gap = (s[0] - s[1]) / k;
        assert!(gap.abs() <= 4.0 * 0.5 / k.sqrt(), "cell gap {gap}");
    }
}

#[test]
fn constant_prediction_error_equals_oracle_variance() {
    let spec = SyntheticSpec::new(2000, 3, 1, 1, Nonlinearity::Tanh, 0.5, 2);
    let (data, oracle) = simulate(&spec).unwrap();
    let truth = oracle.conditional_mean(1, data.x0(), data.z()).unwrap();
    let means: Vec<f64> = truth.column_iter().map(|c| c.mean()).collect();
    let pred = Matrix::from_fn(2000, 3, |_, j| means[j]);
    let variance: f64 = truth
        .column_iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2000.0)
        .sum::<f64>()
        / 3.0;
    let got = oracle_mse(&oracle, &pred, data.x0(), data.z(), 1).unwrap();
    assert!((got - variance).abs() < 1e-12);
}

/// Logistic regression by Newton iterations; returns coefficients and
/// standard errors, intercept first.
fn logistic(x: &Matrix, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows();
    let design = hstack(&Matrix::from_element(n, 1, 1.0), x).unwrap();
    let k = design.ncols();
    let mut w = Matrix::zeros(k, 1);
    let mut info = Matrix::identity(k, k);
    for _ in 0..30 {
        let eta = &design * &w;
        let p: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let grad = design.transpose() * Matrix::from_fn(n, 1, |i, _| y[i] - p[i]);
        let weighted = Matrix::from_fn(n, k, |i, j| design[(i, j)] * p[i] * (1.0 - p[i]));
        info = design.transpose() * weighted;
        let step = info.clone().cholesky().unwrap().solve(&grad);
        w += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let cov = info.try_inverse().unwrap();
    (
        (0..k).map(|i| w[(i, 0)]).collect(),
        (0..k).map(|i| cov[(i, i)].sqrt()).collect(),
    )
}

#[test]
fn missingness_depends_on_baseline_only() {
    let (d, q) = (3, 1);
    let mut spec = SyntheticSpec::new(20_000, d, q, 1, Nonlinearity::Tanh, 0.5, 21);
    spec.mar = Some(MarRule::on_first_item(0.3, 1.0, d, q));
    let (data, _) = simulate(&spec).unwrap();
    let fu = &data.followups()[0];
    // The same seed without a missingness rule supplies the follow-up values
    // hidden by the mask.
    let (full, _) = simulate(&SyntheticSpec {
        mar: None,
        ..spec.clone()
    })
    .unwrap();
    let xt = &full.followups()[0].values;
    let predictors = hstack(&hstack(data.x0(), data.z()).unwrap(), xt).unwrap();
    let missing: Vec<f64> = fu.observed.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
    let (coef, se) = logistic(&predictors, &missing);
    assert!(coef[1] > 0.5, "first baseline item drives missingness: {}", coef[1]);
    for j in 0..d {
        let idx = 1 + d + q + j;
        assert!(
            coef[idx].abs() <= 3.0 * se[idx],
            "follow-up item {j}: {} ± {}",
            coef[idx],
            se[idx]
        );
    }
}

#[test]
fn csv_round_trip_keeps_masks() {
    let mut spec = SyntheticSpec::new(200, 3, 2, 3, Nonlinearity::Piecewise, 0.5, 6);
    spec.mar = Some(MarRule::on_first_item(0.2, 1.0, 3, 2));
    let (data, _) = simulate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&data, &path).unwrap();
    let (loaded, report) = load_csv(&path, Some(data.schema())).unwrap();
    assert_eq!(loaded, data);
    assert_eq!(report.total_partial(), 0);
    for (a, b) in loaded.followups().iter().zip(data.followups()) {
        assert_eq!(a.observed, b.observed);
    }
}

#[test]
fn refit_decoder_equals_inverse_for_linear_preprocessor() {
    let (data, _) = simulate(&SyntheticSpec::new(300, 4, 2, 2, Nonlinearity::Tanh, 0.5, 1)).unwrap();
    let inv = RefineModel::fit(&data, &LearnerSpec::linear(), DecoderMode::Invert).unwrap();
    let refit = RefineModel::fit(&data, &LearnerSpec::linear(), DecoderMode::RefitOls).unwrap();
    for &t in &data.schema().time_labels {
        let a = inv.coefficient_matrix(t).unwrap();
        let b = refit.coefficient_matrix(t).unwrap();
        assert!(max_abs_diff(a, b) < 1e-8);
    }
}

#[test]
fn mar_complete_case_fit_uses_observed_rows_only() {
    let mut spec = SyntheticSpec::new(600, 3, 1, 2, Nonlinearity::Tanh, 0.5, 14);
    spec.mar = Some(MarRule::on_first_item(0.3, 1.0, 3, 1));
    let (data, _) = simulate(&spec).unwrap();
    let model = RefineModel::fit(&data, &LearnerSpec::linear(), DecoderMode::Invert).unwrap();
    for (tm, fu) in model.time_models().iter().zip(data.followups()) {
        assert_eq!(tm.n_complete(), fu.n_observed());
        assert!(tm.n_complete() < 600);
    }
}

fn eval_config(n_boot: usize, variants: Vec<Variant>) -> EvalConfig {
    EvalConfig {
        n_boot,
        seed: 17,
        variants,
        forest: ForestConfig {
            n_trees: 30,
            ..ForestConfig::default()
        },
        ..EvalConfig::default()
    }
}

#[test]
fn single_replicate_report_is_reproducible() {
    let (data, _) = simulate(&SyntheticSpec::new(120, 4, 1, 2, Nonlinearity::Tanh, 0.5, 3)).unwrap();
    let config = eval_config(1, Variant::ablations());
    let a = bootstrap_evaluate(&data, &config).unwrap().to_json().unwrap();
    let b = bootstrap_evaluate(&data, &config).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn variant_order_does_not_change_metrics() {
    let (data, _) = simulate(&SyntheticSpec::new(150, 4, 1, 2, Nonlinearity::Tanh, 0.5, 4)).unwrap();
    let forward = eval_config(4, Variant::ablations());
    let mut reversed_variants = Variant::ablations();
    reversed_variants.reverse();
    let reversed = eval_config(4, reversed_variants);
    let a = bootstrap_evaluate(&data, &forward).unwrap();
    let b = bootstrap_evaluate(&data, &reversed).unwrap();
    for cell in &a.cells {
        let other = b
            .cells
            .iter()
            .find(|c| c.variant == cell.variant && c.time == cell.time)
            .unwrap();
        assert_eq!(cell.metrics, other.metrics);
    }
}

#[test]
fn replicate_accounting_balances() {
    let (data, _) = simulate(&SyntheticSpec::new(100, 6, 1, 2, Nonlinearity::Tanh, 0.5, 5)).unwrap();
    let report = bootstrap_evaluate(
        &data,
        &eval_config(6, vec![Variant::REFINE, Variant::LINEAR_PREPROCESSOR]),
    )
    .unwrap();
    for cell in &report.cells {
        assert_eq!(cell.attempted, cell.succeeded + cell.failed + cell.redrawn);
        for m in &cell.metrics {
            if let (Some(lo), Some(hi)) = (m.p025, m.p975) {
                assert!(lo <= hi);
            }
        }
    }
    assert_eq!(report.replicates.len(), 6);
}

#[test]
fn too_few_complete_cases_are_recorded_as_failures() {
    let mut spec = SyntheticSpec::new(60, 5, 1, 1, Nonlinearity::Linear, 0.5, 2);
    spec.mar = Some(MarRule::on_first_item(0.9, 0.5, 5, 1));
    let (data, _) = simulate(&spec).unwrap();
    let report = bootstrap_evaluate(&data, &eval_config(5, vec![Variant::LINEAR_PREPROCESSOR])).unwrap();
    let cell = &report.cells[0];
    assert!(cell.failed > 0);
    assert_eq!(cell.failures.len(), cell.failed);
    assert_eq!(cell.attempted, cell.succeeded + cell.failed + cell.redrawn);
}

#[test]
fn forest_matches_linear_preprocessor_on_linear_data() {
    // Large leaves keep the forest in its smoothing regime; with tiny leaves its variance does not shrink with n.
    let (data, _) = simulate(&SyntheticSpec::new(4000, 2, 0, 1, Nonlinearity::Linear, 0.5, 10)).unwrap();
    let mut config = eval_config(20, vec![Variant::REFINE, Variant::LINEAR_PREPROCESSOR]);
    config.forest.n_trees = 100;
    config.forest.min_leaf = 50;
    config.metrics = MetricToggles {
        forward: true,
        backward: false,
        cosine: false,
    };
    let report = bootstrap_evaluate(&data, &config).unwrap();
    let rf = report.mean(Variant::REFINE, 1, MetricName::ForwardCorrelation).unwrap();
    let lin = report
        .mean(Variant::LINEAR_PREPROCESSOR, 1, MetricName::ForwardCorrelation)
        .unwrap();
    assert!((rf - lin).abs() <= 0.02, "forest {rf} vs linear {lin}");
}

#[test]
fn report_files_are_written() {
    let (data, _) = simulate(&SyntheticSpec::new(100, 3, 1, 2, Nonlinearity::Tanh, 0.5, 6)).unwrap();
    let report = bootstrap_evaluate(&data, &eval_config(3, Variant::ablations())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_all(dir.path()).unwrap();
    for name in [
        "report.json",
        "timings.json",
        "frontier.csv",
        "metrics_refine.csv",
        "metrics_ols_decoder.csv",
        "metrics_linear_preprocessor.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics_refine.csv")).unwrap();
    assert!(metrics.starts_with("variant,time,metric,replicate,value"));
    // 3 replicates × 2 time points × 3 metrics.
    assert_eq!(metrics.lines().count(), 1 + 3 * 2 * 3);
    assert!(report.timings.mean_train_seconds("refine").unwrap() >= 0.0);
    let learner_kinds: Vec<LearnerKind> = report.config.variants.iter().map(|v| v.learner).collect();
    assert_eq!(learner_kinds.len(), 3);
}
