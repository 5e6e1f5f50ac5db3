use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use refine::data::{load_schema, save_schema};
use refine::eval::{
    bootstrap_evaluate, complexity_probe, rate_experiment, EvalConfig, EvaluationReport, ProbeConfig, RateConfig,
    Variant,
};
use refine::metrics::MetricName;
use refine::{
    load_csv, save_csv, simulate, DecoderMode, LongitudinalDataset, Nonlinearity, RefineModel, SyntheticSpec,
};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "refine",
    version,
    about = "Longitudinal item prediction with a linear, item-aligned decoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with optional [simulate], [learner], [fit], [evaluate],
    /// [rates] and [bench] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Linear,
    Tanh,
    Piecewise,
}

impl From<Shape> for Nonlinearity {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Linear => Nonlinearity::Linear,
            Shape::Tanh => Nonlinearity::Tanh,
            Shape::Piecewise => Nonlinearity::Piecewise,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset (data.csv, schema.json).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Number of follow-up time points.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, value_enum)]
        nonlinearity: Option<Shape>,
        #[arg(long)]
        noise_sd: Option<f64>,
    },
    /// Fit a model on a wide-format CSV and write model.bin.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Schema sidecar the CSV header must match.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Predict follow-up items for every fitted time point.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Bootstrap out-of-bag evaluation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Bootstrap evaluation of the method and its two ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Decoder convergence-rate experiment (rates.csv).
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Training-cost probe over n, d and the number of time points.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] refine::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(refine::Error::InvalidSpec(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            common,
            n,
            d,
            q,
            t,
            nonlinearity,
            noise_sd,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let mut spec = cfg
                .simulate
                .unwrap_or_else(|| SyntheticSpec::new(500, 10, 2, 3, Nonlinearity::Tanh, 0.5, 0));
            spec.n = n.unwrap_or(spec.n);
            spec.d = d.unwrap_or(spec.d);
            spec.q = q.unwrap_or(spec.q);
            spec.t = t.unwrap_or(spec.t);
            spec.nonlinearity = nonlinearity.map(Into::into).unwrap_or(spec.nonlinearity);
            spec.noise_sd = noise_sd.unwrap_or(spec.noise_sd);
            spec.seed = common.seed.unwrap_or(spec.seed);
            let (data, _) = simulate(&spec)?;
            create_dir(&common.out)?;
            save_csv(&data, common.out.join("data.csv"))?;
            save_schema(data.schema(), common.out.join("schema.json"))?;
            println!(
                "wrote {} subjects, {} items, {} time points to {}",
                data.n(),
                data.schema().d(),
                data.schema().time_labels.len(),
                common.out.display()
            );
        }
        Command::Fit { common, data, schema } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let expected = schema.map(load_schema).transpose()?;
            let dataset = read_data(&data, expected.as_ref())?;
            let mut learner = cfg.learner.unwrap_or_default();
            learner.seed = common.seed.unwrap_or(learner.seed);
            let decoder = cfg.decoder.unwrap_or(DecoderMode::Invert);
            let model = RefineModel::fit_with(&dataset, &learner, decoder, &cfg.fit.unwrap_or_default())?;
            create_dir(&common.out)?;
            model.save(common.out.join("model.bin"))?;
            write_coefficients(&model, &common.out, common.format)?;
            println!("wrote {}", common.out.join("model.bin").display());
        }
        Command::Predict { common, model, data } => {
            let model = RefineModel::load(model)?;
            let dataset = read_data(&data, None)?;
            let schema = model.schema();
            if dataset.schema().item_names != schema.item_names
                || dataset.schema().covariate_names != schema.covariate_names
            {
                return Err(refine::Error::SchemaMismatch(
                    "baseline or covariate columns differ from the model's".into(),
                )
                .into());
            }
            create_dir(&common.out)?;
            for tm in model.time_models() {
                let pred = model.predict(tm.label(), dataset.x0(), dataset.z())?;
                let path = common.out.join(format!(
                    "predictions_t{}.{}",
                    tm.label(),
                    if common.format == Format::Csv { "csv" } else { "json" }
                ));
                write_predictions(&path, common.format, dataset.subject_ids(), &schema.item_names, &pred)?;
            }
            println!(
                "wrote predictions for {} time points to {}",
                model.time_models().len(),
                common.out.display()
            );
        }
        Command::Evaluate { common, data, n_boot } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let config = cfg.evaluate.unwrap_or_default();
            evaluate(&common, &data, n_boot, config)?;
        }
        Command::Ablate { common, data, n_boot } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let config = EvalConfig {
                variants: Variant::ablations(),
                ..cfg.evaluate.unwrap_or_default()
            };
            evaluate(&common, &data, n_boot, config)?;
        }
        Command::Rates { common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let mut config: RateConfig = cfg.rates.unwrap_or_default();
            config.seed = common.seed.unwrap_or(config.seed);
            let table = rate_experiment(&config)?;
            create_dir(&common.out)?;
            table.write_csv(common.out.join("rates.csv"))?;
            std::fs::write(common.out.join("rates.json"), json(&table)?)?;
            println!("n\tinvert\trefit_ols\tinvert_wins");
            for row in &table.rows {
                println!(
                    "{}\t{:.5}\t{:.5}\t{:.2}",
                    row.n, row.invert_median, row.refit_median, row.invert_win_fraction
                );
            }
            println!(
                "slopes: invert {:.3}, refit_ols {:.3}",
                table.invert_slope, table.refit_slope
            );
        }
        Command::Bench { common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let mut config: ProbeConfig = cfg.bench.unwrap_or_default();
            config.seed = common.seed.unwrap_or(config.seed);
            let table = complexity_probe(&config)?;
            create_dir(&common.out)?;
            std::fs::write(common.out.join("timings.json"), json(&table)?)?;
            let mut w = csv::Writer::from_path(common.out.join("timings.csv")).map_err(refine::Error::from)?;
            w.write_record(["sweep", "n", "d", "t", "seconds"])
                .map_err(refine::Error::from)?;
            for (sweep, points) in [
                ("n", &table.n_sweep[..]),
                ("d", &table.d_sweep[..]),
                ("t", &table.t_pair[..]),
            ] {
                for p in points {
                    w.write_record([
                        sweep.to_owned(),
                        p.n.to_string(),
                        p.d.to_string(),
                        p.t.to_string(),
                        p.seconds.to_string(),
                    ])
                    .map_err(refine::Error::from)?;
                }
            }
            w.flush()?;
            println!(
                "n slope {:.3}, d slope {:.3}, T-doubling ratio {:.3}",
                table.n_slope, table.d_slope, table.t_ratio
            );
        }
    }
    Ok(())
}

fn evaluate(common: &Common, data: &Path, n_boot: Option<usize>, mut config: EvalConfig) -> Result<(), CliError> {
    config.seed = common.seed.unwrap_or(config.seed);
    config.n_boot = n_boot.unwrap_or(config.n_boot);
    let dataset = read_data(data, None)?;
    let report = bootstrap_evaluate(&dataset, &config)?;
    report.write_all(&common.out)?;
    print_summary(&report, common.format);
    Ok(())
}

fn print_summary(report: &EvaluationReport, format: Format) {
    let metrics = [
        MetricName::ForwardCorrelation,
        MetricName::BackwardCorrelation,
        MetricName::CosineDiagonal,
    ];
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    match format {
        Format::Csv => {
            println!("variant,time,metric,mean,sd,p025,p975,failed");
            for cell in &report.cells {
                for m in metrics.iter().filter_map(|&name| cell.metric(name)) {
                    println!(
                        "{},{},{},{},{},{},{},{}",
                        cell.variant,
                        cell.time,
                        m.metric.as_str(),
                        fmt(m.mean),
                        fmt(m.sd),
                        fmt(m.p025),
                        fmt(m.p975),
                        cell.failed
                    );
                }
            }
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = report
                .cells
                .iter()
                .map(|cell| {
                    let mut row = serde_json::json!({
                        "variant": cell.variant,
                        "time": cell.time,
                        "failed": cell.failed,
                    });
                    for m in &cell.metrics {
                        row[m.metric.as_str()] = serde_json::json!(m.mean);
                    }
                    row
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).unwrap_or_default());
        }
    }
}

fn read_data(path: &Path, expected: Option<&refine::DatasetSchema>) -> Result<LongitudinalDataset, CliError> {
    let (dataset, report) = load_csv(path, expected)?;
    for (label, count) in &report.partial_visits {
        if *count > 0 {
            eprintln!("warning: {count} subjects masked at time {label} because of partially empty visits");
        }
    }
    Ok(dataset)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))
}

fn write_coefficients(model: &RefineModel, out: &Path, format: Format) -> Result<(), CliError> {
    let items = &model.schema().item_names;
    match format {
        Format::Json => {
            let entries: Vec<serde_json::Value> = model
                .time_models()
                .iter()
                .map(|tm| {
                    let beta = tm.beta();
                    let rows: Vec<Vec<f64>> = beta.row_iter().map(|r| r.iter().copied().collect()).collect();
                    serde_json::json!({ "time": tm.label(), "items": items, "beta": rows })
                })
                .collect();
            std::fs::write(out.join("coefficients.json"), json(&entries)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(out.join("coefficients.csv")).map_err(refine::Error::from)?;
            w.write_record(["time", "baseline_item", "followup_item", "beta"])
                .map_err(refine::Error::from)?;
            for tm in model.time_models() {
                let beta = tm.beta();
                for (i, from) in items.iter().enumerate() {
                    for (j, to) in items.iter().enumerate() {
                        w.write_record([
                            tm.label().to_string(),
                            from.clone(),
                            to.clone(),
                            beta[(i, j)].to_string(),
                        ])
                        .map_err(refine::Error::from)?;
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn write_predictions(
    path: &Path,
    format: Format,
    ids: &[String],
    items: &[String],
    pred: &refine::Matrix,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(refine::Error::from)?;
            let header: Vec<&str> = std::iter::once("subject_id")
                .chain(items.iter().map(String::as_str))
                .collect();
            w.write_record(&header).map_err(refine::Error::from)?;
            for (i, id) in ids.iter().enumerate() {
                let row: Vec<String> = std::iter::once(id.clone())
                    .chain(pred.row(i).iter().map(|v| v.to_string()))
                    .collect();
                w.write_record(&row).map_err(refine::Error::from)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = ids
                .iter()
                .enumerate()
                .map(
                    |(i, id)| serde_json::json!({ "subject_id": id, "values": pred.row(i).iter().collect::<Vec<_>>() }),
                )
                .collect();
            std::fs::write(path, json(&serde_json::json!({ "items": items, "predictions": rows }))?)?;
        }
    }
    Ok(())
}
